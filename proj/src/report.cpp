#include "rksp/report.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace rksp {

namespace {

void dump_to(const Json& v, std::string& out, int indent, int depth) {
    auto newline = [&](int level) {
        if (indent < 0) return;
        out += '\n';
        out.append(static_cast<std::size_t>(indent * level), ' ');
    };
    switch (v.type()) {
        case Json::value_t::object: {
            if (v.empty()) {
                out += "{}";
                return;
            }
            out += '{';
            bool first = true;
            for (auto it = v.begin(); it != v.end(); ++it) {
                if (!first) out += ',';
                first = false;
                newline(depth + 1);
                out += Json(it.key()).dump();
                out += indent < 0 ? ":" : ": ";
                dump_to(it.value(), out, indent, depth + 1);
            }
            newline(depth);
            out += '}';
            return;
        }
        case Json::value_t::array: {
            if (v.empty()) {
                out += "[]";
                return;
            }
            out += '[';
            bool first = true;
            for (const Json& item : v) {
                if (!first) out += ',';
                first = false;
                newline(depth + 1);
                dump_to(item, out, indent, depth + 1);
            }
            newline(depth);
            out += ']';
            return;
        }
        case Json::value_t::number_float: {
            const double d = v.get<double>();
            if (!std::isfinite(d)) {
                out += "null";
                return;
            }
            char buf[40];
            std::snprintf(buf, sizeof buf, "%.17g", d);
            out += buf;
            // Keep a float looking like a float when read back.
            if (std::string(buf).find_first_of(".eEn") == std::string::npos) out += ".0";
            return;
        }
        default:
            out += v.dump();
    }
}

double number_or(const Json& v, double null_value) { return v.is_null() ? null_value : v.get<double>(); }

Json complex_list(const ComplexVector& values) {
    Json arr = Json::array();
    for (Eigen::Index i = 0; i < values.size(); ++i) arr.push_back(Json::array({values(i).real(), values(i).imag()}));
    return arr;
}

ComplexVector complex_from(const Json& arr) {
    ComplexVector out(static_cast<Eigen::Index>(arr.size()));
    Eigen::Index i = 0;
    for (const Json& pair : arr) out(i++) = Complex(pair.at(0).get<double>(), pair.at(1).get<double>());
    return out;
}

Json optional_number(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

std::string dump_json(const Json& value, int indent) {
    std::string out;
    dump_to(value, out, indent, 0);
    out += '\n';
    return out;
}

void write_json(const Json& value, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out << dump_json(value);
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

Json read_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, "malformed JSON in " + path.string() + ": " + e.what());
    }
}

void check_schema(const Json& doc) {
    if (!doc.is_object() || !doc.contains("schema_version"))
        throw Error(ErrorCode::InvalidArgument, "document has no schema_version");
    const Json& v = doc["schema_version"];
    if (!v.is_number_integer() || v.get<long long>() != kSchemaVersion)
        throw Error(ErrorCode::InvalidArgument, "unsupported schema_version " + v.dump());
}

Json config_to_json(const ProfilerConfig& c) {
    Json j;
    j["epsilon"] = c.epsilon;
    j["mode"] = c.mode == DmdMode::Full ? "full" : "randomized";
    j["rank"] = c.rank;
    j["subsample"] = c.subsample;
    j["eps_u"] = c.thresholds.eps_u;
    j["eps_n"] = c.thresholds.eps_n;
    j["delta_c"] = c.thresholds.delta_c;
    j["resdmd"] = c.resdmd;
    j["tau"] = c.tau;
    j["eps_r"] = c.eps_r;
    j["eps_nl"] = c.eps_nl;
    j["kreiss"] = c.kreiss;
    j["kreiss_grid"] = c.kreiss_grid.describe();
    j["seed"] = c.seed;
    j["aggregate"] = c.aggregate == Aggregate::Mean ? "mean" : "max";
    return j;
}

Json layer_to_json(const LayerSpectralProfile& l) {
    Json j;
    j["layer"] = l.layer;
    j["m_near1"] = l.masses.m_near1;
    j["m_gt1"] = l.masses.m_gt1;
    j["m_lt1"] = l.masses.m_lt1;
    j["m_mid"] = l.masses.m_mid;
    j["mode_count"] = l.masses.mode_count;
    j["rho"] = l.rho;
    j["kappa"] = l.kappa;
    j["eta_nl"] = l.eta_nl;
    j["kreiss"] = l.kreiss;
    j["reliability_fraction"] = l.reliability_fraction;
    j["degenerate_update"] = l.degenerate_update;
    j["defective"] = l.defective;
    j["randomized"] = l.randomized;
    j["rank"] = l.rank;
    j["eigenvalues"] = complex_list(l.eigenvalues);
    j["all_eigenvalues"] = complex_list(l.all_eigenvalues);
    return j;
}

Json profile_to_json(const SpectralProfile& p, const ProfilerConfig& config) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = "profile";
    j["config"] = config_to_json(config);
    j["layer_count"] = p.layers.size();
    Json layers = Json::array();
    for (const auto& l : p.layers) layers.push_back(layer_to_json(l));
    j["layers"] = std::move(layers);
    Json agg;
    for (const std::string& name : profile_metric_names()) {
        const auto it = p.aggregates.find(name);
        if (it == p.aggregates.end()) continue;
        agg[name] = Json{{"mean", it->second.mean}, {"max", it->second.max}, {"min", it->second.min},
                         {"std", it->second.std}};
    }
    j["aggregates"] = std::move(agg);
    j["aggregate"] = p.aggregate == Aggregate::Mean ? "mean" : "max";
    j["risk_score"] = p.risk_score;
    j["composite_score"] = p.composite_score;
    return j;
}

SpectralProfile profile_from_json(const Json& doc) {
    check_schema(doc);
    try {
        SpectralProfile p;
        p.aggregate = doc.value("aggregate", std::string("mean")) == "max" ? Aggregate::Max : Aggregate::Mean;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        // null kreiss is +inf when it was computed and NaN when it was switched off.
        bool kreiss_on = true;
        if (doc.contains("config") && doc.at("config").contains("kreiss")) kreiss_on = doc.at("config").at("kreiss").get<bool>();
        for (const Json& lj : doc.at("layers")) {
            LayerSpectralProfile l;
            l.layer = lj.at("layer").get<std::size_t>();
            l.masses.m_near1 = lj.at("m_near1").get<double>();
            l.masses.m_gt1 = lj.at("m_gt1").get<double>();
            l.masses.m_lt1 = lj.at("m_lt1").get<double>();
            l.masses.m_mid = lj.at("m_mid").get<double>();
            l.masses.mode_count = lj.at("mode_count").get<std::size_t>();
            l.rho = lj.at("rho").get<double>();
            l.kappa = number_or(lj.at("kappa"), kInfinity);
            l.eta_nl = number_or(lj.at("eta_nl"), nan);
            l.kreiss = number_or(lj.at("kreiss"), kreiss_on ? kInfinity : nan);
            l.reliability_fraction = lj.at("reliability_fraction").get<double>();
            l.degenerate_update = lj.at("degenerate_update").get<bool>();
            l.defective = lj.at("defective").get<bool>();
            l.randomized = lj.at("randomized").get<bool>();
            l.rank = lj.at("rank").get<Eigen::Index>();
            l.eigenvalues = complex_from(lj.at("eigenvalues"));
            l.all_eigenvalues = complex_from(lj.at("all_eigenvalues"));
            p.layers.push_back(std::move(l));
        }
        aggregate_profile(p);
        return p;
    } catch (const nlohmann::json::exception& e) {
        throw Error(ErrorCode::InvalidArgument, std::string("malformed profile report: ") + e.what());
    }
}

Json eval_report_to_json(const EvalReport& r) {
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = "evaluation";
    j["n"] = r.n;
    j["positives"] = r.positives;
    j["auroc"] = r.auroc;
    j["ci_low"] = optional_number(r.ci_low);
    j["ci_high"] = optional_number(r.ci_high);
    j["ece"] = r.ece;
    j["fisher_p"] = optional_number(r.fisher_p);
    Json bins = Json::array();
    for (const auto& b : r.reliability_bins)
        bins.push_back(Json{{"bin_center", b.bin_center},
                            {"predicted_mean", b.predicted_mean},
                            {"observed_freq", b.observed_freq},
                            {"count", b.count}});
    j["reliability_bins"] = std::move(bins);
    return j;
}

Json kss_evaluation_to_json(const KssEvaluation& e, std::size_t layer) {
    Json j;
    j["layer"] = layer;
    j["loss"] = e.loss;
    j["unstable_term"] = e.unstable_term;
    j["near_unit_term"] = e.near_unit_term;
    j["m_soft"] = e.m_soft;
    j["grad_norm"] = e.grad_wrt_operator.size() ? e.grad_wrt_operator.norm() : 0.0;
    j["used_finite_differences"] = e.used_finite_differences;
    j["zero_modulus_modes"] = e.zero_modulus_modes;
    Json moduli = Json::array();
    for (Eigen::Index i = 0; i < e.eigenvalues.size(); ++i) moduli.push_back(std::abs(e.eigenvalues(i)));
    j["moduli"] = std::move(moduli);
    return j;
}

Json trial_record_to_json(const TrialRecord& r) {
    Json j;
    j["config_tag"] = r.config_tag;
    j["regime"] = regime_name(r.regime);
    j["seed"] = r.seed;
    j["model_seed"] = r.model_seed;
    j["lr"] = r.lr;
    j["kss_alpha"] = optional_number(r.kss_alpha);
    j["diverged"] = r.diverged;
    j["divergence_step"] = r.divergence_step ? Json(*r.divergence_step) : Json(nullptr);
    j["final_metric"] = r.final_metric;
    j["risk_score_at_init"] = r.risk_score_at_init;
    j["composite_score_at_init"] = r.composite_score_at_init;
    j["risk_score_final"] = optional_number(r.risk_score_final);
    j["kss_applications"] = r.kss_applications;
    j["kss_failures"] = r.kss_failures;
    j["gradient_baseline_features"] = Json{{"init_grad_norm", r.features.init_grad_norm},
                                           {"grad_norm_step100", optional_number(r.features.grad_norm_step100)},
                                           {"grad_var_1to100", r.features.grad_var_1to100},
                                           {"spike_count_1to500", r.features.spike_count_1to500}};
    j["loss_trace"] = r.loss_trace;
    j["grad_norm_trace"] = r.grad_norm_trace;
    return j;
}

void write_eigenvalue_csv(const SpectralProfile& profile, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out << "re,im,layer\n";
    char buf[96];
    for (const auto& l : profile.layers)
        for (Eigen::Index i = 0; i < l.all_eigenvalues.size(); ++i) {
            std::snprintf(buf, sizeof buf, "%.17g,%.17g,%zu\n", l.all_eigenvalues(i).real(),
                          l.all_eigenvalues(i).imag(), l.layer);
            out << buf;
        }
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

void write_reliability_csv(const EvalReport& report, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
    out << "bin_center,predicted_mean,observed_freq,count\n";
    char buf[128];
    for (const auto& b : report.reliability_bins) {
        std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g,%zu\n", b.bin_center, b.predicted_mean, b.observed_freq,
                      b.count);
        out << buf;
    }
    if (!out) throw Error(ErrorCode::IoFailure, "write failed for " + path.string());
}

std::vector<std::pair<std::string, std::string>> read_key_values(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
    std::vector<std::pair<std::string, std::string>> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorCode::InvalidArgument,
                        path.string() + ":" + std::to_string(line_no) + ": expected key = value");
        out.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return out;
}

double parse_double(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::InvalidArgument, "bad number for " + key + ": '" + text + "'");
}

long long parse_int(const std::string& key, const std::string& text) {
    try {
        std::size_t used = 0;
        const long long v = std::stoll(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw Error(ErrorCode::InvalidArgument, "bad integer for " + key + ": '" + text + "'");
}

bool parse_bool(const std::string& key, const std::string& text) {
    if (text == "true" || text == "1" || text == "on" || text == "yes") return true;
    if (text == "false" || text == "0" || text == "off" || text == "no") return false;
    throw Error(ErrorCode::InvalidArgument, "bad boolean for " + key + ": '" + text + "'");
}

std::vector<double> parse_double_list(const std::string& key, const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(parse_double(key, trim(item)));
    if (out.empty()) throw Error(ErrorCode::InvalidArgument, "empty list for " + key);
    return out;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& key, const std::string& text) {
    std::vector<std::uint64_t> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        const auto dash = item.find('-', 1);
        if (dash == std::string::npos) {
            const long long v = parse_int(key, item);
            if (v < 0) throw Error(ErrorCode::InvalidArgument, "negative seed in " + key);
            out.push_back(static_cast<std::uint64_t>(v));
            continue;
        }
        const long long a = parse_int(key, trim(item.substr(0, dash)));
        const long long b = parse_int(key, trim(item.substr(dash + 1)));
        if (a < 0 || b < a) throw Error(ErrorCode::InvalidArgument, "bad seed range in " + key + ": " + item);
        for (long long s = a; s <= b; ++s) out.push_back(static_cast<std::uint64_t>(s));
    }
    if (out.empty()) throw Error(ErrorCode::InvalidArgument, "empty list for " + key);
    return out;
}

bool apply_profiler_key(ProfilerConfig& c, const std::string& key, const std::string& value) {
    if (key == "epsilon") c.epsilon = parse_double(key, value);
    else if (key == "mode") {
        if (value == "full") c.mode = DmdMode::Full;
        else if (value == "randomized") c.mode = DmdMode::Randomized;
        else throw Error(ErrorCode::InvalidArgument, "mode must be full or randomized");
    } else if (key == "rank") c.rank = parse_int(key, value);
    else if (key == "subsample") c.subsample = parse_int(key, value);
    else if (key == "eps_u") c.thresholds.eps_u = parse_double(key, value);
    else if (key == "eps_n") c.thresholds.eps_n = parse_double(key, value);
    else if (key == "delta_c") c.thresholds.delta_c = parse_double(key, value);
    else if (key == "resdmd") c.resdmd = parse_bool(key, value);
    else if (key == "tau") c.tau = parse_double(key, value);
    else if (key == "eps_r") c.eps_r = parse_double(key, value);
    else if (key == "eps_nl") c.eps_nl = parse_double(key, value);
    else if (key == "kreiss") c.kreiss = parse_bool(key, value);
    else if (key == "kreiss_radii") c.kreiss_grid.radii = static_cast<int>(parse_int(key, value));
    else if (key == "kreiss_angles") c.kreiss_grid.angles = static_cast<int>(parse_int(key, value));
    else if (key == "kreiss_refine") c.kreiss_grid.refine_rounds = static_cast<int>(parse_int(key, value));
    else if (key == "seed") {
        const long long s = parse_int(key, value);
        if (s < 0) throw Error(ErrorCode::InvalidArgument, "seed must be >= 0");
        c.seed = static_cast<std::uint64_t>(s);
    } else if (key == "aggregate") {
        if (value == "mean") c.aggregate = Aggregate::Mean;
        else if (value == "max") c.aggregate = Aggregate::Max;
        else throw Error(ErrorCode::InvalidArgument, "aggregate must be mean or max");
    } else
        return false;
    return true;
}

ProfilerConfig load_profiler_config(const std::filesystem::path& path) {
    ProfilerConfig config;
    for (const auto& [key, value] : read_key_values(path))
        if (!apply_profiler_key(config, key, value))
            throw Error(ErrorCode::InvalidArgument, "unknown config key '" + key + "' in " + path.string());
    config.validate();
    return config;
}

}  // namespace rksp
