#include "rksp/risk_eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "rksp/parallel.hpp"
#include "rksp/random.hpp"

namespace rksp {

std::size_t CohortResult::positives() const {
    return static_cast<std::size_t>(
        std::count_if(trials.begin(), trials.end(), [](const Trial& t) { return t.diverged; }));
}

void CohortResult::validate() const {
    if (trials.empty()) throw Error(ErrorCode::InvalidArgument, "empty cohort");
    for (const Trial& t : trials)
        if (!std::isfinite(t.score)) throw Error(ErrorCode::InvalidArgument, "non-finite score in cohort");
}

namespace {

// U statistic from midranks of the pooled scores.
double auroc_from(const std::vector<double>& pos, const std::vector<double>& neg) {
    struct Item {
        double score;
        bool positive;
    };
    std::vector<Item> items;
    items.reserve(pos.size() + neg.size());
    for (double s : pos) items.push_back({s, true});
    for (double s : neg) items.push_back({s, false});
    std::sort(items.begin(), items.end(), [](const Item& a, const Item& b) { return a.score < b.score; });
    double rank_sum = 0.0;
    std::size_t i = 0;
    while (i < items.size()) {
        std::size_t j = i;
        while (j < items.size() && items[j].score == items[i].score) ++j;
        // Ranks i+1..j share the midrank (i+1+j)/2.
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t k = i; k < j; ++k)
            if (items[k].positive) rank_sum += midrank;
        i = j;
    }
    const double p = static_cast<double>(pos.size());
    const double n = static_cast<double>(neg.size());
    const double u = rank_sum - p * (p + 1.0) / 2.0;
    return u / (p * n);
}

void split(const CohortResult& cohort, std::vector<double>& pos, std::vector<double>& neg) {
    cohort.validate();
    for (const Trial& t : cohort.trials) (t.diverged ? pos : neg).push_back(t.score);
    if (pos.empty() || neg.empty())
        throw Error(ErrorCode::SingleClassCohort, "cohort needs both diverged and converged trials");
}

double percentile(std::vector<double> values, double q) {
    // Linear interpolation between order statistics.
    std::sort(values.begin(), values.end());
    const double h = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(h));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (h - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

double log_choose(std::uint64_t n, std::uint64_t k) {
    return std::lgamma(static_cast<double>(n) + 1.0) - std::lgamma(static_cast<double>(k) + 1.0) -
           std::lgamma(static_cast<double>(n - k) + 1.0);
}

}  // namespace

double auroc(const CohortResult& cohort) {
    std::vector<double> pos, neg;
    split(cohort, pos, neg);
    return auroc_from(pos, neg);
}

std::pair<double, double> bootstrap_ci(const CohortResult& cohort, std::size_t resamples, std::uint64_t seed) {
    std::vector<double> pos, neg;
    split(cohort, pos, neg);
    if (resamples == 0) throw Error(ErrorCode::InvalidArgument, "bootstrap needs at least one resample");
    std::vector<double> stats(resamples);
    parallel_for(resamples, [&](std::size_t i) {
        Rng rng = Rng::substream(seed, i);
        std::vector<double> p(pos.size()), n(neg.size());
        for (double& v : p) v = pos[rng.below(pos.size())];
        for (double& v : n) v = neg[rng.below(neg.size())];
        stats[i] = auroc_from(p, n);
    });
    return {percentile(stats, 0.025), percentile(stats, 0.975)};
}

CalibrationResult ece(const CohortResult& cohort, int bins) {
    cohort.validate();
    if (bins < 1) throw Error(ErrorCode::InvalidArgument, "need at least one bin");
    for (const Trial& t : cohort.trials)
        if (t.score < 0.0 || t.score > 1.0)
            throw Error(ErrorCode::ScoreOutOfRange, "score " + std::to_string(t.score) + " outside [0, 1]");
    std::vector<double> score_sum(bins, 0.0), label_sum(bins, 0.0);
    std::vector<std::size_t> count(bins, 0);
    for (const Trial& t : cohort.trials) {
        const int b = std::min(bins - 1, static_cast<int>(std::floor(t.score * bins)));
        score_sum[b] += t.score;
        label_sum[b] += t.diverged ? 1.0 : 0.0;
        ++count[b];
    }
    CalibrationResult out;
    const double n = static_cast<double>(cohort.size());
    for (int b = 0; b < bins; ++b) {
        if (count[b] == 0) continue;
        ReliabilityBin bin;
        bin.bin_center = (b + 0.5) / bins;
        bin.count = count[b];
        bin.predicted_mean = score_sum[b] / static_cast<double>(count[b]);
        bin.observed_freq = label_sum[b] / static_cast<double>(count[b]);
        out.ece += (static_cast<double>(count[b]) / n) * std::abs(bin.predicted_mean - bin.observed_freq);
        out.bins.push_back(bin);
    }
    return out;
}

double fisher_exact_log(const ContingencyTable& table) {
    const std::uint64_t a = table[0][0], b = table[0][1], c = table[1][0], d = table[1][1];
    const std::uint64_t row0 = a + b, row1 = c + d, col0 = a + c, col1 = b + d;
    if (row0 == 0 || row1 == 0 || col0 == 0 || col1 == 0)
        throw Error(ErrorCode::DegenerateMargins, "every row and column margin must be positive");
    const std::uint64_t n = row0 + row1;
    const double log_denominator = log_choose(n, col0);
    auto log_pmf = [&](std::uint64_t x) {
        return log_choose(row0, x) + log_choose(row1, col0 - x) - log_denominator;
    };
    const std::uint64_t lo = col0 > row1 ? col0 - row1 : 0;
    const std::uint64_t hi = std::min(row0, col0);
    const double observed = log_pmf(a);
    const double cutoff = observed + std::log1p(1e-12);
    std::vector<double> terms;
    for (std::uint64_t x = lo; x <= hi; ++x) {
        const double lp = log_pmf(x);
        if (lp <= cutoff) terms.push_back(lp);
    }
    const double peak = *std::max_element(terms.begin(), terms.end());
    double sum = 0.0;
    for (double t : terms) sum += std::exp(t - peak);
    return std::min(0.0, peak + std::log(sum));
}

double fisher_exact(const ContingencyTable& table) { return std::exp(fisher_exact_log(table)); }

CohortResult read_cohort_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::string line;
    if (!std::getline(in, line)) throw Error(ErrorCode::InvalidArgument, "empty cohort file " + path.string());
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line != "score,diverged,config_tag")
        throw Error(ErrorCode::InvalidArgument, "cohort header must be 'score,diverged,config_tag'");
    CohortResult cohort;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string score, diverged, tag;
        if (!std::getline(ss, score, ',') || !std::getline(ss, diverged, ','))
            throw Error(ErrorCode::InvalidArgument, "malformed cohort row at line " + std::to_string(line_no));
        std::getline(ss, tag);
        Trial t;
        try {
            std::size_t used = 0;
            t.score = std::stod(score, &used);
            if (used != score.size()) throw std::invalid_argument("trailing");
        } catch (const std::exception&) {
            throw Error(ErrorCode::InvalidArgument, "bad score at line " + std::to_string(line_no));
        }
        if (diverged == "1" || diverged == "true")
            t.diverged = true;
        else if (diverged == "0" || diverged == "false")
            t.diverged = false;
        else
            throw Error(ErrorCode::InvalidArgument, "bad diverged flag at line " + std::to_string(line_no));
        t.config_tag = tag;
        cohort.trials.push_back(std::move(t));
    }
    cohort.validate();
    return cohort;
}

void write_cohort_csv(const CohortResult& cohort, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out << "score,diverged,config_tag\n";
    char buf[40];
    for (const Trial& t : cohort.trials) {
        std::snprintf(buf, sizeof buf, "%.17g", t.score);
        out << buf << ',' << (t.diverged ? 1 : 0) << ',' << t.config_tag << '\n';
    }
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

EvalReport evaluate(const CohortResult& cohort, std::size_t resamples, int bins, std::uint64_t seed) {
    EvalReport report;
    report.n = cohort.size();
    report.positives = cohort.positives();
    report.auroc = auroc(cohort);
    if (resamples > 0) {
        const auto [lo, hi] = bootstrap_ci(cohort, resamples, seed);
        report.ci_low = lo;
        report.ci_high = hi;
    }
    const CalibrationResult cal = ece(cohort, bins);
    report.ece = cal.ece;
    report.reliability_bins = cal.bins;

    // With exactly two config tags, test divergence rate against tag.
    std::set<std::string> tags;
    for (const Trial& t : cohort.trials) tags.insert(t.config_tag);
    if (tags.size() == 2) {
        ContingencyTable table{};
        const std::string& first = *tags.begin();
        for (const Trial& t : cohort.trials) ++table[t.config_tag == first ? 0 : 1][t.diverged ? 0 : 1];
        try {
            report.fisher_p = fisher_exact(table);
        } catch (const Error&) {
            // Degenerate margins: no test.
        }
    }
    return report;
}

}  // namespace rksp
