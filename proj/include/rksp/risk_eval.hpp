#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "rksp/common.hpp"

namespace rksp {

struct Trial {
    double score = 0.0;
    bool diverged = false;
    std::string config_tag;
};

struct CohortResult {
    std::vector<Trial> trials;

    std::size_t size() const { return trials.size(); }
    std::size_t positives() const;
    void validate() const;
};

struct ReliabilityBin {
    double bin_center = 0.0;
    double predicted_mean = 0.0;
    double observed_freq = 0.0;
    std::size_t count = 0;
};

struct EvalReport {
    double auroc = 0.0;
    std::optional<double> ci_low;
    std::optional<double> ci_high;
    double ece = 0.0;
    std::vector<ReliabilityBin> reliability_bins;
    std::optional<double> fisher_p;
    std::size_t n = 0;
    std::size_t positives = 0;
};

/// P(score of a random positive > score of a random negative), ties 1/2,
/// from midranks (Mann-Whitney U). Throws SingleClassCohort.
double auroc(const CohortResult& cohort);

/// Stratified percentile bootstrap (2.5 / 97.5) of the AUROC: positives and
/// negatives are resampled separately with their class counts preserved.
/// Resample i draws from Rng::substream(seed, i).
std::pair<double, double> bootstrap_ci(const CohortResult& cohort, std::size_t resamples = 1000,
                                       std::uint64_t seed = 0);

struct CalibrationResult {
    double ece = 0.0;
    std::vector<ReliabilityBin> bins;  ///< non-empty bins only
};

/// Equal-width bins on [0, 1] (a score of exactly 1 falls in the last bin);
/// ECE = sum_b (n_b / n) |mean score_b - positive rate_b|.
CalibrationResult ece(const CohortResult& cohort, int bins = 10);

using ContingencyTable = std::array<std::array<std::uint64_t, 2>, 2>;

/// Two-sided Fisher exact test: sums the hypergeometric probabilities of all
/// tables with the observed margins whose probability is <= that of the
/// observed table (relative slack 1e-12), evaluated in log space.
double fisher_exact(const ContingencyTable& table);

/// Natural log of the two-sided p-value; finite even when p underflows.
double fisher_exact_log(const ContingencyTable& table);

/// Reads `score,diverged,config_tag` CSV (header required).
CohortResult read_cohort_csv(const std::filesystem::path& path);
void write_cohort_csv(const CohortResult& cohort, const std::filesystem::path& path);

/// AUROC, optional CI (resamples == 0 skips it), ECE and bins.
EvalReport evaluate(const CohortResult& cohort, std::size_t resamples = 1000, int bins = 10,
                    std::uint64_t seed = 0);

}  // namespace rksp
