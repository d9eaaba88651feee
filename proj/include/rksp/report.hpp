#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "rksp/kss.hpp"
#include "rksp/profiler.hpp"
#include "rksp/risk_eval.hpp"
#include "rksp/synthetic_lab.hpp"

namespace rksp {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

/// JSON text (newline-terminated) with doubles printed as %.17g and NaN/Inf as null.
/// Field order is insertion order, so equal inputs give identical bytes.
std::string dump_json(const Json& value, int indent = 2);
void write_json(const Json& value, const std::filesystem::path& path);
Json read_json(const std::filesystem::path& path);

/// Throws InvalidArgument unless the document carries schema_version 1.
void check_schema(const Json& doc);

Json config_to_json(const ProfilerConfig& config);
Json layer_to_json(const LayerSpectralProfile& layer);
Json profile_to_json(const SpectralProfile& profile, const ProfilerConfig& config);
/// Rebuilds layers and aggregates from a profile report.
SpectralProfile profile_from_json(const Json& doc);

Json eval_report_to_json(const EvalReport& report);
Json kss_evaluation_to_json(const KssEvaluation& eval, std::size_t layer);
Json trial_record_to_json(const TrialRecord& record);

/// `re,im,layer` rows for every DMD eigenvalue of every layer.
void write_eigenvalue_csv(const SpectralProfile& profile, const std::filesystem::path& path);
/// `bin_center,predicted_mean,observed_freq,count` rows.
void write_reliability_csv(const EvalReport& report, const std::filesystem::path& path);

/// Flat `key = value` text, `#` comments, blank lines ignored.
std::vector<std::pair<std::string, std::string>> read_key_values(const std::filesystem::path& path);

/// Applies one key to a ProfilerConfig. Keys: epsilon, mode, rank, subsample,
/// eps_u, eps_n, delta_c, resdmd, tau, eps_r, eps_nl, kreiss, kreiss_radii,
/// kreiss_angles, kreiss_refine, seed, aggregate. Returns false for unknown keys.
bool apply_profiler_key(ProfilerConfig& config, const std::string& key, const std::string& value);
ProfilerConfig load_profiler_config(const std::filesystem::path& path);

/// Value parsers that throw InvalidArgument naming the key.
double parse_double(const std::string& key, const std::string& text);
long long parse_int(const std::string& key, const std::string& text);
bool parse_bool(const std::string& key, const std::string& text);
std::vector<double> parse_double_list(const std::string& key, const std::string& text);
/// Comma list; items may be ranges `a-b` (inclusive).
std::vector<std::uint64_t> parse_seed_list(const std::string& key, const std::string& text);

}  // namespace rksp
