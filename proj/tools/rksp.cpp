// rksp command-line front end.
#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>

#include "rksp/kss.hpp"
#include "rksp/profiler.hpp"
#include "rksp/report.hpp"
#include "rksp/risk_eval.hpp"
#include "rksp/snapshot_store.hpp"
#include "rksp/synthetic_lab.hpp"

namespace fs = std::filesystem;
using namespace rksp;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitNumerical = 3;

SnapshotDataset load_input(const fs::path& path) {
    if (!fs::exists(path)) throw Error(ErrorCode::IoFailure, "input not found: " + path.string());
    return fs::is_directory(path) ? load_dataset_csv(path) : load_dataset(path);
}

void emit(const Json& doc, const std::string& output) {
    if (output.empty() || output == "-")
        std::cout << dump_json(doc);
    else
        write_json(doc, output);
}

struct ProfileArgs {
    std::string input, config, output, eigenvalues;
    std::optional<std::uint64_t> seed;
};

ProfilerConfig resolve_config(const ProfileArgs& a) {
    ProfilerConfig config = a.config.empty() ? ProfilerConfig{} : load_profiler_config(a.config);
    if (a.seed) config.seed = *a.seed;
    config.validate();
    return config;
}

int cmd_profile(const ProfileArgs& a) {
    const ProfilerConfig config = resolve_config(a);
    const SnapshotDataset data = load_input(a.input);
    const SpectralProfile p = profile(data, config);
    emit(profile_to_json(p, config), a.output);
    if (!a.eigenvalues.empty()) write_eigenvalue_csv(p, a.eigenvalues);
    return 0;
}

int cmd_risk(const ProfileArgs& a) {
    const ProfilerConfig config = resolve_config(a);
    const SpectralProfile p = profile(load_input(a.input), config);
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = "risk";
    j["aggregate"] = p.aggregate == Aggregate::Mean ? "mean" : "max";
    j["risk_score"] = p.risk_score;
    j["composite_score"] = p.composite_score;
    Json per_layer = Json::array();
    for (const auto& l : p.layers) per_layer.push_back(l.masses.m_near1);
    j["m_near1"] = std::move(per_layer);
    emit(j, a.output);
    return 0;
}

struct EvaluateArgs {
    std::string cohort, output, reliability, profile, eigenvalues;
    std::size_t bootstrap = 1000;
    int bins = 10;
    std::uint64_t seed = 0;
};

int cmd_evaluate(const EvaluateArgs& a) {
    const CohortResult cohort = read_cohort_csv(a.cohort);
    const EvalReport report = evaluate(cohort, a.bootstrap, a.bins, a.seed);
    emit(eval_report_to_json(report), a.output);
    if (!a.reliability.empty()) write_reliability_csv(report, a.reliability);
    if (!a.profile.empty()) {
        const SpectralProfile p = profile_from_json(read_json(a.profile));
        write_eigenvalue_csv(p, a.eigenvalues.empty() ? fs::path(a.profile).replace_extension(".eigs.csv")
                                                      : fs::path(a.eigenvalues));
    }
    return 0;
}

struct KssArgs {
    std::string input, output;
    KssConfig kss;
    double epsilon = 1e-5;
    std::uint64_t seed = 0;
};

int cmd_kss_eval(const KssArgs& a) {
    a.kss.validate();
    const SnapshotDataset data = load_input(a.input);
    data.validate();
    Json layers = Json::array();
    double total = 0.0;
    for (std::size_t l = 0; l < data.layer_count(); ++l) {
        try {
            const WhitenedPair pair = whiten(data.x(l), data.y(l), a.epsilon);
            const KssEvaluation e = kss_gradient(pair, a.kss, a.seed + l);
            total += e.loss;
            layers.push_back(kss_evaluation_to_json(e, l));
        } catch (const Error& e) {
            throw Error(e.code(), "layer " + std::to_string(l) + ": " + e.detail());
        }
    }
    Json j;
    j["schema_version"] = kSchemaVersion;
    j["kind"] = "kss";
    j["alpha"] = a.kss.alpha;
    j["beta"] = a.kss.beta;
    j["gamma"] = a.kss.gamma;
    j["temperature"] = a.kss.temperature;
    j["tau_u"] = a.kss.tau_u;
    j["tau_l"] = a.kss.tau_l;
    j["rank"] = a.kss.rank;
    j["mean_loss"] = total / static_cast<double>(data.layer_count());
    j["weighted_mean_loss"] = a.kss.alpha * total / static_cast<double>(data.layer_count());
    j["layers"] = std::move(layers);
    emit(j, a.output);
    return 0;
}

struct SimulateArgs {
    std::string preset, config, output_dir = ".";
    std::uint64_t seed = 0;
};

struct Simulation {
    std::string name = "custom";
    std::vector<Regime> regimes;
    Eigen::Index d = 32;
    std::size_t layers = 6;
    double kappa = 3.0;
    Nonlinearity nonlinearity;
    std::vector<double> lrs;
    std::vector<std::uint64_t> seeds;
    std::size_t seed_count = 8;
    std::vector<std::optional<KssConfig>> arms{std::nullopt};
    ToyTask task;
    TrainConfig train;
};

Simulation preset_simulation(const std::string& name) {
    const DeskLab lab = desk_lab();
    Simulation s;
    s.name = name;
    s.task = lab.task;
    s.train = lab.train;
    if (name == "table3-desk") {
        s.regimes = {Regime::NoormLike};
        s.lrs = {lab.noorm_unstable_lr};
        s.seed_count = 24;
        KssConfig kss;
        kss.alpha = 0.15;
        s.arms = {std::nullopt, kss};
    } else if (name == "table2-desk") {
        s.regimes = {Regime::PrelnLike, Regime::NoormLike};
        s.lrs = lab.band_lrs();
        s.seed_count = 6;
    } else {
        throw Error(ErrorCode::InvalidArgument, "unknown preset '" + name + "' (table2-desk, table3-desk)");
    }
    return s;
}

void apply_simulation_file(Simulation& s, const fs::path& path) {
    KssConfig kss;
    std::optional<std::string> arms;
    for (const auto& [key, value] : read_key_values(path)) {
        if (key == "regimes") {
            s.regimes.clear();
            std::stringstream ss(value);
            std::string item;
            while (std::getline(ss, item, ',')) {
                item.erase(0, item.find_first_not_of(' '));
                item.erase(item.find_last_not_of(' ') + 1);
                s.regimes.push_back(parse_regime(item));
            }
        } else if (key == "d") s.d = parse_int(key, value);
        else if (key == "layers") s.layers = static_cast<std::size_t>(parse_int(key, value));
        else if (key == "kappa") s.kappa = parse_double(key, value);
        else if (key == "tanh_scale") {
            const double v = parse_double(key, value);
            s.nonlinearity.kind = v > 0.0 ? Nonlinearity::Kind::Tanh : Nonlinearity::Kind::None;
            s.nonlinearity.scale = v > 0.0 ? v : 1.0;
        } else if (key == "lrs") s.lrs = parse_double_list(key, value);
        else if (key == "seeds") s.seeds = parse_seed_list(key, value);
        else if (key == "seed_count") s.seed_count = static_cast<std::size_t>(parse_int(key, value));
        else if (key == "kss") arms = value;
        else if (key == "alpha") kss.alpha = parse_double(key, value);
        else if (key == "beta") kss.beta = parse_double(key, value);
        else if (key == "gamma") kss.gamma = parse_double(key, value);
        else if (key == "temperature") kss.temperature = parse_double(key, value);
        else if (key == "tau_u") kss.tau_u = parse_double(key, value);
        else if (key == "tau_l") kss.tau_l = parse_double(key, value);
        else if (key == "rank") kss.rank = parse_int(key, value);
        else if (key == "apply_every") kss.apply_every = static_cast<int>(parse_int(key, value));
        else if (key == "layer_fraction") kss.layer_fraction = parse_double(key, value);
        else if (key == "readout") s.task.readout_scale = parse_double(key, value);
        else if (key == "pairs") s.task.pairs = parse_int(key, value);
        else if (key == "key_dim") s.task.key_dim = parse_int(key, value);
        else if (key == "batch") s.task.batch = parse_int(key, value);
        else if (key == "steps") s.train.steps = static_cast<std::size_t>(parse_int(key, value));
        else if (key == "momentum") s.train.momentum = parse_double(key, value);
        else if (key == "warmup") s.train.warmup = static_cast<std::size_t>(parse_int(key, value));
        else if (key == "train_inner") s.train.train_inner = parse_bool(key, value);
        else throw Error(ErrorCode::InvalidArgument, "unknown simulation key '" + key + "' in " + path.string());
    }
    if (arms) {
        if (*arms == "off") s.arms = {std::nullopt};
        else if (*arms == "on") s.arms = {kss};
        else if (*arms == "both") s.arms = {std::nullopt, kss};
        else throw Error(ErrorCode::InvalidArgument, "kss must be off, on or both");
    } else {
        for (auto& arm : s.arms)
            if (arm) arm = kss;
    }
}

int cmd_simulate(const SimulateArgs& a) {
    Simulation s;
    if (!a.preset.empty()) s = preset_simulation(a.preset);
    else {
        const DeskLab lab = desk_lab();
        s.task = lab.task;
        s.train = lab.train;
    }
    if (!a.config.empty()) apply_simulation_file(s, a.config);
    if (s.regimes.empty()) throw Error(ErrorCode::InvalidArgument, "no regimes given (use --preset or regimes = ...)");
    if (s.lrs.empty()) throw Error(ErrorCode::InvalidArgument, "no learning rates given");
    if (s.seeds.empty())
        for (std::size_t i = 0; i < s.seed_count; ++i) s.seeds.push_back(a.seed * 1000 + i);

    std::vector<TrialPlan> plans;
    for (const auto& arm : s.arms)
        for (Regime r : s.regimes)
            for (double lr : s.lrs)
                for (std::uint64_t seed : s.seeds) {
                    TrialPlan p;
                    p.spec = StackSpec::preset(r, trial_model_seed(a.seed, seed), s.d, s.layers);
                    p.spec.target_kappa = s.kappa;
                    p.spec.nonlinearity = s.nonlinearity;
                    p.lr = lr;
                    p.seed = seed;
                    p.kss = arm;
                    p.tag = std::string(regime_name(r)) + (arm ? "+kss" : "");
                    plans.push_back(std::move(p));
                }
    const CohortRun run = run_plans(plans, s.task, s.train);

    const fs::path dir = a.output_dir;
    fs::create_directories(dir);
    write_cohort_csv(run.cohort, dir / "cohort.csv");
    Json records = Json::array();
    for (const auto& r : run.records) records.push_back(trial_record_to_json(r));
    write_json(Json{{"schema_version", kSchemaVersion}, {"kind", "trials"}, {"trials", std::move(records)}},
               dir / "trials.json");

    Json summary;
    summary["schema_version"] = kSchemaVersion;
    summary["kind"] = "simulation";
    summary["preset"] = s.name;
    summary["seed"] = a.seed;
    summary["lrs"] = s.lrs;
    Json arms = Json::array();
    std::vector<std::pair<std::size_t, std::size_t>> counts;
    const std::size_t per_arm = plans.size() / s.arms.size();
    for (std::size_t k = 0; k < s.arms.size(); ++k) {
        std::size_t diverged = 0, shifted = 0;
        double delta = 0.0, score = 0.0;
        CohortResult arm_cohort;
        for (std::size_t i = k * per_arm; i < (k + 1) * per_arm; ++i) {
            const TrialRecord& r = run.records[i];
            diverged += r.diverged ? 1 : 0;
            score += r.risk_score_at_init;
            if (r.risk_score_final) {
                delta += *r.risk_score_final - r.risk_score_at_init;
                ++shifted;
            }
            arm_cohort.trials.push_back(run.cohort.trials[i]);
        }
        counts.emplace_back(diverged, per_arm - diverged);
        Json arm;
        arm["name"] = s.arms[k] ? "kss" : "baseline";
        arm["alpha"] = s.arms[k] ? Json(s.arms[k]->alpha) : Json(nullptr);
        arm["trials"] = per_arm;
        arm["diverged"] = diverged;
        arm["divergence_rate"] = static_cast<double>(diverged) / static_cast<double>(per_arm);
        arm["mean_risk_score"] = score / static_cast<double>(per_arm);
        arm["mean_delta_m_near1"] = shifted ? Json(delta / static_cast<double>(shifted)) : Json(nullptr);
        const std::size_t pos = arm_cohort.positives();
        arm["evaluation"] = pos > 0 && pos < arm_cohort.size()
                                ? eval_report_to_json(evaluate(arm_cohort, 1000, 10, a.seed))
                                : Json(nullptr);
        arms.push_back(std::move(arm));
    }
    summary["arms"] = std::move(arms);
    if (counts.size() == 2) {
        const ContingencyTable table{{{counts[0].first, counts[0].second}, {counts[1].first, counts[1].second}}};
        try {
            summary["arm_fisher_p"] = fisher_exact(table);
        } catch (const Error&) {
            summary["arm_fisher_p"] = nullptr;
        }
    }
    write_json(summary, dir / "summary.json");
    std::cout << dump_json(summary);
    return 0;
}

struct CalibrateArgs {
    std::string regime = "noorm_like";
    double lo = 0.02, hi = 0.4;
    std::size_t iterations = 8;
    std::string seeds = "1000-1007";
};

int cmd_calibrate(const CalibrateArgs& a) {
    const DeskLab lab = desk_lab();
    const Calibration c = calibrate_lr(StackSpec::preset(parse_regime(a.regime), 0),
                                       parse_seed_list("seeds", a.seeds), a.lo, a.hi, a.iterations, lab.task,
                                       lab.train);
    Json probes = Json::array();
    for (const auto& [lr, f] : c.probes) probes.push_back(Json{{"lr", lr}, {"fraction", f}});
    std::cout << dump_json(Json{{"schema_version", kSchemaVersion},
                                {"kind", "calibration"},
                                {"regime", a.regime},
                                {"lr", c.lr},
                                {"fraction", c.fraction},
                                {"probes", std::move(probes)}});
    return 0;
}

int report_error(const Error& e) {
    std::cerr << "rksp: " << e.what() << "\n";
    return is_validation_error(e.code()) ? kExitValidation : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Residual Koopman spectral profiling"};
    app.require_subcommand(1);

    ProfileArgs pa;
    auto* profile_cmd = app.add_subcommand("profile", "Profile a snapshot container and write the report JSON");
    profile_cmd->add_option("--input", pa.input, "snapshot container or CSV directory")->required();
    profile_cmd->add_option("--config", pa.config, "key = value profiler config");
    profile_cmd->add_option("--output", pa.output, "report path (stdout if omitted)");
    profile_cmd->add_option("--eigenvalues", pa.eigenvalues, "also write re,im,layer CSV");
    profile_cmd->add_option("--seed", pa.seed);

    ProfileArgs ra;
    auto* risk_cmd = app.add_subcommand("risk", "Print the risk score of a snapshot container");
    risk_cmd->add_option("--input", ra.input)->required();
    risk_cmd->add_option("--config", ra.config);
    risk_cmd->add_option("--output", ra.output);
    risk_cmd->add_option("--seed", ra.seed);

    EvaluateArgs ea;
    auto* eval_cmd = app.add_subcommand("evaluate", "AUROC, bootstrap CI, ECE and Fisher test for a cohort CSV");
    eval_cmd->add_option("--cohort", ea.cohort, "score,diverged,config_tag CSV")->required();
    eval_cmd->add_option("--bootstrap", ea.bootstrap, "resamples (0 disables the CI)");
    eval_cmd->add_option("--bins", ea.bins)->check(CLI::PositiveNumber);
    eval_cmd->add_option("--seed", ea.seed);
    eval_cmd->add_option("--output", ea.output);
    eval_cmd->add_option("--reliability", ea.reliability, "reliability-diagram CSV");
    eval_cmd->add_option("--profile", ea.profile, "profile report JSON for the eigenvalue scatter CSV");
    eval_cmd->add_option("--eigenvalues", ea.eigenvalues, "scatter CSV path (default <profile>.eigs.csv)");

    KssArgs ka;
    auto* kss_cmd = app.add_subcommand("kss-eval", "Per-layer KSS loss and operator-gradient norm");
    kss_cmd->add_option("--input", ka.input)->required();
    kss_cmd->add_option("--output", ka.output);
    kss_cmd->add_option("--alpha", ka.kss.alpha);
    kss_cmd->add_option("--beta", ka.kss.beta);
    kss_cmd->add_option("--gamma", ka.kss.gamma);
    kss_cmd->add_option("--temperature", ka.kss.temperature);
    kss_cmd->add_option("--tau-u", ka.kss.tau_u);
    kss_cmd->add_option("--tau-l", ka.kss.tau_l);
    kss_cmd->add_option("--rank", ka.kss.rank);
    kss_cmd->add_option("--epsilon", ka.epsilon);
    kss_cmd->add_option("--seed", ka.seed);

    SimulateArgs sa;
    auto* sim_cmd = app.add_subcommand("simulate", "Run a synthetic-lab cohort");
    sim_cmd->add_option("--preset", sa.preset, "table2-desk or table3-desk");
    sim_cmd->add_option("--config", sa.config, "key = value simulation file");
    sim_cmd->add_option("--seed", sa.seed);
    sim_cmd->add_option("--output-dir", sa.output_dir);

    CalibrateArgs ca;
    auto* cal_cmd = app.add_subcommand("calibrate", "Bisect the smallest lr with >= 50% divergence");
    cal_cmd->add_option("--regime", ca.regime);
    cal_cmd->add_option("--lo", ca.lo);
    cal_cmd->add_option("--hi", ca.hi);
    cal_cmd->add_option("--iterations", ca.iterations);
    cal_cmd->add_option("--seeds", ca.seeds, "probe seeds, e.g. 1000-1007");

    app.add_subcommand("export-format", "Print the snapshot container layout");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << "rksp: " << e.what() << "\n\n" << app.help();
        return kExitValidation;
    }

    try {
        if (*profile_cmd) return cmd_profile(pa);
        if (*risk_cmd) return cmd_risk(ra);
        if (*eval_cmd) return cmd_evaluate(ea);
        if (*kss_cmd) return cmd_kss_eval(ka);
        if (*sim_cmd) return cmd_simulate(sa);
        if (*cal_cmd) return cmd_calibrate(ca);
        std::cout << container_format_description();
        return 0;
    } catch (const Error& e) {
        return report_error(e);
    } catch (const std::exception& e) {
        std::cerr << "rksp: " << e.what() << "\n";
        return kExitNumerical;
    }
}
