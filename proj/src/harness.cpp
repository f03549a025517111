#include "cmwno/harness.hpp"

#include "cmwno/error.hpp"
#include "cmwno/gradcheck.hpp"
#include "cmwno/multiwavelet.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

namespace cmwno::harness {

namespace fs = std::filesystem;
using datagen::FieldDataset;
using nn::Tensor;

// ---- threads ------------------------------------------------------------

std::size_t worker_count() {
    if (const char* env = std::getenv("CMWNO_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end != env && *end == '\0' && v > 0) return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    const std::size_t workers = std::min(worker_count(), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::exception_ptr> errors(n);
    std::atomic<std::size_t> next{0};
    auto run = [&] {
        for (std::size_t i = next++; i < n; i = next++) {
            try {
                body(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(run);
    for (auto& t : pool) t.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

// ---- metrics ------------------------------------------------------------

namespace {

std::string fmt(double x) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (std::size_t i = 0; i < parts.size(); ++i) out += (i ? sep : "") + parts[i];
    return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, sep)) out.push_back(item);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

void write_text(const std::string& path, const std::string& text) {
    const fs::path p(path);
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << text;
    if (!out) throw IoError("write failed for " + path);
}

std::vector<std::string> read_lines(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) lines.push_back(line);
    return lines;
}

double parse_double(const std::string& s, const std::string& context) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') throw IoError(context + ": bad number '" + s + "'");
    return v;
}

}  // namespace

std::string metrics_header() {
    return "# rel_l2 = ||pred - truth||_2 / ||truth||_2 per sample, uniform weight over grid points, mean over samples\n"
           "model,system,resolution,param,variable,rel_l2,epoch,seconds\n";
}

std::string format_row(const MetricsRow& r) {
    return r.model + "," + r.system + "," + std::to_string(r.resolution) + "," + fmt(r.param) + "," + r.variable + "," +
           fmt(r.rel_l2) + "," + std::to_string(r.epoch) + "," + fmt(r.seconds);
}

void write_metrics(const std::string& path, const std::vector<MetricsRow>& rows) {
    std::string text = metrics_header();
    for (const auto& r : rows) text += format_row(r) + "\n";
    write_text(path, text);
}

std::vector<MetricsRow> read_metrics(const std::string& path) {
    std::vector<MetricsRow> rows;
    for (const auto& line : read_lines(path)) {
        if (line.empty() || line[0] == '#' || line.rfind("model,", 0) == 0) continue;
        const auto f = split(line, ',');
        if (f.size() != 8) throw IoError(path + ": malformed metrics row '" + line + "'");
        MetricsRow r;
        r.model = f[0];
        r.system = f[1];
        r.resolution = static_cast<std::size_t>(parse_double(f[2], path));
        r.param = parse_double(f[3], path);
        r.variable = f[4];
        r.rel_l2 = parse_double(f[5], path);
        r.epoch = static_cast<std::size_t>(parse_double(f[6], path));
        r.seconds = parse_double(f[7], path);
        rows.push_back(r);
    }
    return rows;
}

// ---- generation ---------------------------------------------------------

namespace {

constexpr std::uint64_t kTrainStream = 1;
constexpr std::uint64_t kTestStream = 2;
constexpr std::uint64_t kInitStream = 10;
constexpr std::uint64_t kShuffleStream = 100;
constexpr std::uint64_t kDiceStream = 200;

struct SystemSetup {
    datagen::ReactionDiffusion rd;
    double horizon = 1.0;
    double dt = 1e-3;
    std::vector<std::string> init;
    std::vector<double> gamma;
};

SystemSetup system_setup(const ExperimentConfig& cfg) {
    SystemSetup s;
    if (cfg.system == "gs") {
        datagen::GsParams p;
        p.lambda = cfg.datagen.lambda;
        s.rd = datagen::gray_scott(p);
        s.horizon = p.horizon;
        s.dt = 1e-3;
        s.init = {"grf", "grf"};
        s.gamma = {0.5, 0.5};
    } else if (cfg.system == "bz") {
        datagen::BzParams p;
        s.rd = datagen::belousov_zhabotinsky(p);
        s.horizon = p.horizon;
        s.dt = 2e-4;
        s.init = {"rand", "rand", "rand"};
        s.gamma = {0.3, 0.2, 0.1};
    } else if (cfg.system == "mfg") {
        throw ConfigError("mfg datasets are ingested from files, not generated; set datagen.train_path/test_path");
    } else {
        system_variables(cfg.system);
    }
    if (!cfg.datagen.init.empty()) s.init = cfg.datagen.init;
    if (!cfg.datagen.gamma.empty()) s.gamma = cfg.datagen.gamma;
    if (cfg.datagen.dt > 0.0) s.dt = cfg.datagen.dt;
    return s;
}

}  // namespace

std::string resolution_path(const std::string& path, std::size_t resolution) {
    fs::path p(path);
    const std::string stem = p.stem().string() + "_s" + std::to_string(resolution);
    return (p.parent_path() / (stem + p.extension().string())).string();
}

FieldDataset generate_dataset(const ExperimentConfig& cfg, std::size_t count, std::uint64_t master_seed) {
    const SystemSetup setup = system_setup(cfg);
    const std::size_t nv = setup.rd.names.size();
    FieldDataset ds;
    ds.system = cfg.system;
    ds.resolution = cfg.datagen.resolution;
    ds.domain_lo = 0.0;
    ds.domain_hi = setup.rd.length;
    ds.variables = setup.rd.names;
    ds.times = {0.0, setup.horizon};
    ds.lambda = cfg.system == "gs" ? cfg.datagen.lambda : std::numeric_limits<double>::quiet_NaN();
    ds.master_seed = master_seed;
    ds.samples.resize(count);

    parallel_for(count, [&](std::size_t i) {
        std::vector<datagen::Field> inits;
        for (std::size_t v = 0; v < nv; ++v) {
            std::mt19937_64 rng(datagen::derive_seed(master_seed, i, v));
            if (setup.init[v] == "grf") {
                datagen::GrfSpec spec;
                spec.length = setup.rd.length;
                spec.n = ds.resolution;
                inits.push_back(datagen::sample_grf(spec, rng));
            } else {
                datagen::BandlimitedSpec spec{setup.gamma[v], setup.rd.length, ds.resolution};
                inits.push_back(datagen::sample_bandlimited(spec, rng));
            }
        }
        datagen::Trajectory traj;
        try {
            traj = datagen::etdrk4_solve(setup.rd, inits, setup.dt, ds.times);
        } catch (const NumericError& e) {
            throw NumericError("sample " + std::to_string(i) + ": " + e.what());
        }
        ds.samples[i].resize(nv);
        for (std::size_t v = 0; v < nv; ++v)
            for (std::size_t t = 0; t < ds.times.size(); ++t) ds.samples[i][v].push_back(std::move(traj.snapshots[t][v]));
    });
    return ds;
}

GenerateOutput cmd_generate(const ExperimentConfig& cfg) {
    cfg.validate();
    GenerateOutput out;
    fs::create_directories(cfg.out);
    const struct {
        std::string path;
        std::size_t count;
        std::uint64_t stream;
    } parts[] = {{cfg.train_path(), cfg.datagen.train_samples, kTrainStream},
                 {cfg.test_path(), cfg.datagen.test_samples, kTestStream}};

    std::vector<std::size_t> extra{cfg.train.resolution};
    extra.insert(extra.end(), cfg.eval.resolutions.begin(), cfg.eval.resolutions.end());
    std::sort(extra.begin(), extra.end());
    extra.erase(std::unique(extra.begin(), extra.end()), extra.end());

    for (const auto& part : parts) {
        const auto ds = generate_dataset(cfg, part.count, datagen::derive_seed(cfg.seed, 0, part.stream));
        datagen::write_dataset(part.path, ds);
        out.files.push_back(part.path);
        for (std::size_t r : extra) {
            if (r >= ds.resolution || ds.resolution % r != 0) continue;
            const std::string p = resolution_path(part.path, r);
            datagen::write_dataset(p, datagen::subsample(ds, r));
            out.files.push_back(p);
        }
    }
    return out;
}

// ---- manifest -----------------------------------------------------------

void write_manifest(const std::string& path, const Manifest& m) {
    std::ostringstream o;
    o << "kind = " << model::to_string(m.kind) << "\n"
      << "system = " << m.system << "\n"
      << "k = " << m.config.k << "\n"
      << "c = " << m.config.c << "\n"
      << "floor = " << m.config.floor << "\n"
      << "width = " << m.config.width << "\n"
      << "variables = " << join(m.variables, ",") << "\n"
      << "target_index = " << m.target_index << "\n"
      << "target_time = " << fmt(m.target_time) << "\n"
      << "lambda = " << fmt(m.lambda) << "\n"
      << "train_resolution = " << m.train_resolution << "\n"
      << "dataset_fingerprint = " << m.dataset_fingerprint << "\n"
      << "seed = " << m.seed << "\n"
      << "epoch = " << m.epoch << "\n"
      << "valid_rel_l2 = " << fmt(m.valid_rel_l2) << "\n";
    write_text(path, o.str());
}

Manifest read_manifest(const std::string& path) {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    try {
        pt::ini_parser::read_ini(path, tree);
    } catch (const pt::ini_parser_error& e) {
        throw IoError("manifest " + path + ": " + e.message());
    }
    auto get = [&](const std::string& key) {
        auto v = tree.get_optional<std::string>(key);
        if (!v) throw IoError("manifest " + path + ": missing key '" + key + "'");
        return *v;
    };
    auto num = [&](const std::string& key) { return parse_double(get(key), "manifest " + path); };
    Manifest m;
    try {
        m.kind = model::parse_model_kind(get("kind"));
    } catch (const ConfigError& e) {
        throw IoError("manifest " + path + ": " + e.what());
    }
    m.system = get("system");
    m.config.k = static_cast<int>(num("k"));
    m.config.c = static_cast<std::size_t>(num("c"));
    m.config.floor = static_cast<int>(num("floor"));
    m.config.width = static_cast<std::size_t>(num("width"));
    m.variables = split(get("variables"), ',');
    m.target_index = static_cast<std::size_t>(num("target_index"));
    m.target_time = num("target_time");
    m.lambda = std::strtod(get("lambda").c_str(), nullptr);
    m.train_resolution = static_cast<std::size_t>(num("train_resolution"));
    m.dataset_fingerprint = static_cast<std::uint32_t>(std::stoull(get("dataset_fingerprint")));
    m.seed = std::stoull(get("seed"));
    m.epoch = static_cast<std::size_t>(num("epoch"));
    m.valid_rel_l2 = num("valid_rel_l2");
    return m;
}

std::string manifest_path_for(const std::string& checkpoint) {
    fs::path p(checkpoint);
    p.replace_extension(".manifest");
    return p.string();
}

model::Model load_model(const std::string& checkpoint, Manifest* manifest_out) {
    const Manifest m = read_manifest(manifest_path_for(checkpoint));
    auto mdl = model::Model::create(m.kind, m.variables, m.config, 0);
    const auto tensors = nn::read_checkpoint(checkpoint);
    try {
        model::import_parameters(mdl, tensors);
    } catch (const ConfigError& e) {
        throw IoError("checkpoint " + checkpoint + ": " + e.what());
    }
    if (manifest_out) *manifest_out = m;
    return mdl;
}

// ---- training -----------------------------------------------------------

namespace {

struct LogRow {
    double param = 0.0;
    std::size_t epoch = 0;
    std::size_t step = 0;
    std::string variable;
    double lr = 0.0;
    double loss = 0.0;
};

void write_log(const std::string& path, const std::vector<LogRow>& rows) {
    std::string text = "param,epoch,step,variable,lr,loss\n";
    for (const auto& r : rows)
        text += fmt(r.param) + "," + std::to_string(r.epoch) + "," + std::to_string(r.step) + "," + r.variable + "," +
                fmt(r.lr) + "," + fmt(r.loss) + "\n";
    write_text(path, text);
}

std::vector<LogRow> read_log(const std::string& path) {
    std::vector<LogRow> rows;
    for (const auto& line : read_lines(path)) {
        if (line.empty() || line.rfind("param,", 0) == 0) continue;
        const auto f = split(line, ',');
        if (f.size() != 6) throw IoError(path + ": malformed log row");
        rows.push_back({parse_double(f[0], path), static_cast<std::size_t>(parse_double(f[1], path)),
                        static_cast<std::size_t>(parse_double(f[2], path)), f[3], parse_double(f[4], path),
                        parse_double(f[5], path)});
    }
    return rows;
}

bool same_param(double a, double b) { return std::abs(a - b) <= 1e-12 * std::max(1.0, std::abs(a)); }

Tensor stack(const FieldDataset& ds, std::span<const std::size_t> idx, std::size_t var, std::size_t t) {
    const std::size_t n = ds.resolution;
    Tensor out({idx.size(), 1, n});
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& f = ds.field(idx[b], var, t);
        std::copy(f.begin(), f.end(), out.raw() + b * n);
    }
    return out;
}

model::Batch make_batch(const FieldDataset& ds, std::span<const std::size_t> idx, std::size_t t0, std::size_t t1) {
    model::Batch batch;
    for (std::size_t v = 0; v < ds.variables.size(); ++v) {
        batch.inputs.push_back(stack(ds, idx, v, t0));
        batch.targets.push_back(stack(ds, idx, v, t1));
    }
    return batch;
}

std::vector<double> target_times(const ExperimentConfig& cfg, const FieldDataset& ds) {
    std::vector<double> out;
    if (!cfg.train.target_times.empty()) {
        for (double t : cfg.train.target_times) out.push_back(ds.times[ds.time_index(t)]);
    } else {
        for (double t : ds.times)
            if (t != 0.0) out.push_back(t);
    }
    if (out.empty()) throw ConfigError("dataset has no nonzero target timestamp");
    return out;
}

double row_param(const std::string& system, double lambda, double target_time) {
    return system == "gs" && std::isfinite(lambda) ? lambda : target_time;
}

void check_variables(const ExperimentConfig& cfg, const FieldDataset& ds, const std::string& what) {
    const auto expected = system_variables(cfg.system);
    if (ds.variables != expected)
        throw ConfigError(what + ": dataset variables {" + join(ds.variables, ",") + "} do not match system " +
                          cfg.system + " {" + join(expected, ",") + "}");
}

std::vector<nn::NamedTensor> export_state(model::Model& m, const std::vector<nn::AdamState>& opts, std::size_t epoch,
                                          double best_score, std::size_t best_epoch) {
    auto scalar = [](std::string id, double v) { return nn::NamedTensor{std::move(id), Tensor({1}, v)}; };
    std::vector<nn::NamedTensor> out{scalar("state.epoch", static_cast<double>(epoch)),
                                     scalar("state.best_score", best_score),
                                     scalar("state.best_epoch", static_cast<double>(best_epoch))};
    for (std::size_t i = 0; i < opts.size(); ++i) {
        const std::string pre = "adam." + std::to_string(i) + ".";
        out.push_back(scalar(pre + "step", static_cast<double>(opts[i].step_count)));
        out.push_back(scalar(pre + "lr", opts[i].lr));
        const auto params = m.ops[i].parameters();
        for (std::size_t j = 0; j < params.size(); ++j) {
            out.push_back({pre + "m." + params[j]->id, opts[i].m[j]});
            out.push_back({pre + "v." + params[j]->id, opts[i].v[j]});
        }
    }
    return out;
}

struct ResumeState {
    std::size_t epoch = 0;
    double best_score = 0.0;
    std::size_t best_epoch = 0;
};

ResumeState import_state(model::Model& m, std::vector<nn::AdamState>& opts, const std::vector<nn::NamedTensor>& state,
                         const std::string& path) {
    std::map<std::string, const Tensor*> by_id;
    for (const auto& t : state) by_id[t.id] = &t.value;
    auto get = [&](const std::string& id) -> const Tensor& {
        auto it = by_id.find(id);
        if (it == by_id.end()) throw IoError("training state " + path + ": missing " + id);
        return *it->second;
    };
    ResumeState r;
    r.epoch = static_cast<std::size_t>(get("state.epoch")[0]);
    r.best_score = get("state.best_score")[0];
    r.best_epoch = static_cast<std::size_t>(get("state.best_epoch")[0]);
    for (std::size_t i = 0; i < opts.size(); ++i) {
        const std::string pre = "adam." + std::to_string(i) + ".";
        opts[i].step_count = static_cast<std::size_t>(get(pre + "step")[0]);
        opts[i].lr = get(pre + "lr")[0];
        const auto params = m.ops[i].parameters();
        for (std::size_t j = 0; j < params.size(); ++j) {
            const Tensor& mt = get(pre + "m." + params[j]->id);
            const Tensor& vt = get(pre + "v." + params[j]->id);
            if (!mt.same_shape(opts[i].m[j]) || !vt.same_shape(opts[i].v[j]))
                throw IoError("training state " + path + ": moment shape mismatch for " + params[j]->id);
            opts[i].m[j] = mt;
            opts[i].v[j] = vt;
        }
    }
    return r;
}

}  // namespace

std::vector<double> evaluate(model::Model& mdl, const FieldDataset& ds, std::size_t t_index, std::size_t batch) {
    const std::size_t t0 = ds.time_index(0.0);
    const std::size_t n = ds.sample_count();
    const std::size_t nv = ds.variables.size();
    if (n == 0) throw ConfigError("evaluate: empty dataset");
    batch = std::max<std::size_t>(batch, 1);
    const std::size_t chunks = (n + batch - 1) / batch;
    std::vector<std::vector<double>> per_sample(nv, std::vector<double>(n));
    parallel_for(chunks, [&](std::size_t c) {
        std::vector<std::size_t> idx;
        for (std::size_t i = c * batch; i < std::min(n, (c + 1) * batch); ++i) idx.push_back(i);
        const auto b = make_batch(ds, idx, t0, t_index);
        const auto preds = model::predict(mdl, b.inputs);
        for (std::size_t v = 0; v < nv; ++v) {
            const auto errs = nn::relative_l2_per_sample(preds[v], b.targets[v]);
            for (std::size_t j = 0; j < idx.size(); ++j) per_sample[v][idx[j]] = errs[j];
        }
    });
    std::vector<double> mean(nv);
    for (std::size_t v = 0; v < nv; ++v)
        mean[v] = std::accumulate(per_sample[v].begin(), per_sample[v].end(), 0.0) / static_cast<double>(n);
    return mean;
}

TrainOutput cmd_train(const ExperimentConfig& cfg, const TrainOptions& opts) {
    cfg.validate();
    fs::create_directories(cfg.out);
    const FieldDataset full = datagen::read_dataset(cfg.train_path());
    check_variables(cfg, full, "train");
    if (full.resolution % cfg.train.resolution != 0 || full.resolution < cfg.train.resolution)
        throw ConfigError("train.resolution " + std::to_string(cfg.train.resolution) +
                          " does not divide the dataset resolution " + std::to_string(full.resolution));
    const FieldDataset ds =
        full.resolution == cfg.train.resolution ? full : datagen::subsample(full, cfg.train.resolution);
    const std::uint32_t fp = datagen::fingerprint(full);
    const std::size_t t0 = ds.time_index(0.0);
    const auto targets = target_times(cfg, ds);

    const std::size_t n = ds.sample_count();
    std::size_t n_val = static_cast<std::size_t>(std::floor(static_cast<double>(n) * cfg.train.validation_fraction));
    if (cfg.train.validation_fraction > 0.0 && n_val == 0 && n > 1) n_val = 1;
    if (n_val >= n) throw ConfigError("train: no samples left after the validation split");
    const std::size_t n_train = n - n_val;
    const FieldDataset valid = n_val > 0 ? datagen::slice(ds, n_train, n_val) : FieldDataset{};

    const std::string train_csv = cfg.out + "/train_metrics.csv";
    const std::string valid_csv = cfg.out + "/valid_metrics.csv";
    const std::string log_csv = cfg.out + "/train_log.csv";

    TrainOutput out;
    std::vector<LogRow> log;
    if (opts.resume) {
        if (fs::exists(train_csv)) out.train_rows = read_metrics(train_csv);
        if (fs::exists(valid_csv)) out.valid_rows = read_metrics(valid_csv);
        if (fs::exists(log_csv)) log = read_log(log_csv);
    }

    const std::string tag = model::to_string(cfg.kind);
    const auto start_clock = std::chrono::steady_clock::now();
    auto seconds = [&] {
        if (!cfg.train.timing) return 0.0;
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_clock).count();
    };

    for (std::size_t j = 0; j < targets.size(); ++j) {
        const double target = targets[j];
        const std::size_t ti = ds.time_index(target);
        const double param = row_param(cfg.system, ds.lambda, target);
        const std::string stem = cfg.out + "/model_t" + std::to_string(j);

        auto mdl = model::Model::create(cfg.kind, ds.variables, cfg.model,
                                        datagen::derive_seed(cfg.seed, j, kInitStream));
        auto optimizers = model::make_optimizers(mdl, cfg.train.adam);

        Manifest manifest;
        manifest.kind = cfg.kind;
        manifest.system = cfg.system;
        manifest.config = cfg.model;
        manifest.variables = ds.variables;
        manifest.target_index = j;
        manifest.target_time = target;
        manifest.lambda = ds.lambda;
        manifest.train_resolution = ds.resolution;
        manifest.dataset_fingerprint = fp;
        manifest.seed = cfg.seed;

        ResumeState state{0, std::numeric_limits<double>::infinity(), 0};
        if (opts.resume && fs::exists(stem + ".state")) {
            model::import_parameters(mdl, nn::read_checkpoint(stem + ".last.ckpt"));
            state = import_state(mdl, optimizers, nn::read_checkpoint(stem + ".state"), stem + ".state");
        }
        auto keep = [&](std::size_t epoch, double p) { return !same_param(p, param) || epoch <= state.epoch; };
        std::erase_if(out.train_rows, [&](const MetricsRow& r) { return !keep(r.epoch, r.param); });
        std::erase_if(out.valid_rows, [&](const MetricsRow& r) { return !keep(r.epoch, r.param); });
        std::erase_if(log, [&](const LogRow& r) { return !keep(r.epoch, r.param); });

        for (std::size_t epoch = state.epoch + 1; epoch <= cfg.train.epochs; ++epoch) {
            std::vector<std::size_t> order(n_train);
            std::iota(order.begin(), order.end(), 0);
            std::mt19937_64 shuffle_rng(datagen::derive_seed(cfg.seed, epoch, kShuffleStream + j));
            std::shuffle(order.begin(), order.end(), shuffle_rng);
            std::mt19937_64 dice_rng(datagen::derive_seed(cfg.seed, epoch, kDiceStream + j));

            const std::size_t nv = ds.variables.size();
            std::vector<double> loss_sum(nv, 0.0);
            for (std::size_t start = 0, b = 0; start < n_train; start += cfg.train.batch, ++b) {
                const std::size_t stop = std::min(n_train, start + cfg.train.batch);
                const std::span<const std::size_t> idx(order.data() + start, stop - start);
                const auto batch = make_batch(ds, idx, t0, ti);
                model::DicePath path;
                if (cfg.kind == model::ModelKind::cmwno && nv >= 2) path = model::roll_dice(dice_rng, nv);
                std::vector<double> lr_before;
                for (const auto& o : optimizers) lr_before.push_back(o.lr);
                std::vector<model::StageLoss> losses;
                try {
                    losses = model::train_step(mdl, batch, path, optimizers, b);
                } catch (const NumericError& e) {
                    throw NumericError("epoch " + std::to_string(epoch) + ": " + e.what());
                }
                for (const auto& s : losses) {
                    const std::size_t o = cfg.kind == model::ModelKind::mwt_c ? 0 : s.op;
                    loss_sum[s.op] += s.loss * static_cast<double>(idx.size());
                    log.push_back({param, epoch, optimizers[o].step_count, ds.variables[s.op], lr_before[o], s.loss});
                }
            }

            const double now = seconds();
            double score = 0.0;
            for (std::size_t v = 0; v < nv; ++v) {
                const double mean = loss_sum[v] / static_cast<double>(n_train);
                out.train_rows.push_back({tag, cfg.system, ds.resolution, param, ds.variables[v], mean, epoch, now});
                if (n_val == 0) score += mean / static_cast<double>(nv);
            }
            if (n_val > 0) {
                const auto errs = evaluate(mdl, valid, ti, cfg.train.batch);
                for (std::size_t v = 0; v < nv; ++v) {
                    out.valid_rows.push_back({tag, cfg.system, ds.resolution, param, ds.variables[v], errs[v], epoch, now});
                    score += errs[v] / static_cast<double>(nv);
                }
            }
            if (!std::isfinite(score)) throw NumericError("epoch " + std::to_string(epoch) + ": non-finite validation error");

            const auto params = model::export_parameters(mdl);
            if (score < state.best_score) {
                state.best_score = score;
                state.best_epoch = epoch;
                manifest.epoch = epoch;
                manifest.valid_rel_l2 = score;
                nn::write_checkpoint(stem + ".ckpt", params);
                write_manifest(stem + ".manifest", manifest);
            }
            state.epoch = epoch;
            nn::write_checkpoint(stem + ".last.ckpt", params);
            nn::write_checkpoint(stem + ".state",
                                 export_state(mdl, optimizers, epoch, state.best_score, state.best_epoch));
            write_metrics(train_csv, out.train_rows);
            write_metrics(valid_csv, out.valid_rows);
            write_log(log_csv, log);

            if (opts.stop_after != 0 && epoch >= opts.stop_after) return out;
        }
        if (!fs::exists(stem + ".ckpt")) throw IoError("train: no checkpoint produced for " + stem);
        out.models.push_back({stem + ".ckpt", read_manifest(stem + ".manifest")});
    }
    return out;
}

// ---- evaluation ---------------------------------------------------------

std::vector<MetricsRow> cmd_eval(const ExperimentConfig& cfg, const EvalOptions& opts) {
    cfg.validate();
    const FieldDataset full = datagen::read_dataset(opts.dataset.empty() ? cfg.test_path() : opts.dataset);
    check_variables(cfg, full, "eval");
    for (std::size_t r : cfg.eval.resolutions)
        if (r > full.resolution || full.resolution % r != 0)
            throw ConfigError("eval resolution " + std::to_string(r) + " does not divide the dataset resolution " +
                              std::to_string(full.resolution));

    std::vector<MetricsRow> rows;
    if (opts.oracle) {
        for (double t : target_times(cfg, full)) {
            const std::size_t ti = full.time_index(t);
            for (std::size_t r : cfg.eval.resolutions) {
                const auto ds = datagen::subsample(full, r);
                for (std::size_t v = 0; v < ds.variables.size(); ++v) {
                    double sum = 0.0;
                    for (std::size_t s = 0; s < ds.sample_count(); ++s) {
                        const auto& f = ds.field(s, v, ti);
                        const Tensor truth({1, 1, f.size()}, f);
                        sum += nn::relative_l2_per_sample(truth, truth)[0];
                    }
                    rows.push_back({"oracle", cfg.system, r, row_param(cfg.system, full.lambda, t), ds.variables[v],
                                    sum / static_cast<double>(ds.sample_count()), 0, 0.0});
                }
            }
        }
    } else {
        std::vector<std::string> checkpoints = opts.checkpoints;
        if (checkpoints.empty()) {
            for (std::size_t j = 0;; ++j) {
                const std::string p = cfg.out + "/model_t" + std::to_string(j) + ".ckpt";
                if (!fs::exists(p)) break;
                checkpoints.push_back(p);
            }
        }
        if (checkpoints.empty()) throw IoError("eval: no checkpoints found in " + cfg.out);
        for (const auto& ckpt : checkpoints) {
            Manifest m = read_manifest(manifest_path_for(ckpt));
            if (m.variables != full.variables)
                throw ConfigError("eval: checkpoint variables {" + join(m.variables, ",") +
                                  "} do not match dataset {" + join(full.variables, ",") + "}");
            auto mdl = load_model(ckpt, &m);
            const std::size_t ti = full.time_index(m.target_time);
            const double lambda = std::isfinite(full.lambda) ? full.lambda : m.lambda;
            for (std::size_t r : cfg.eval.resolutions) {
                const auto ds = r == full.resolution ? full : datagen::subsample(full, r);
                const auto errs = evaluate(mdl, ds, ti, cfg.train.batch);
                for (std::size_t v = 0; v < errs.size(); ++v)
                    rows.push_back({model::to_string(m.kind), cfg.system, r, row_param(cfg.system, lambda, m.target_time),
                                    ds.variables[v], errs[v], m.epoch, 0.0});
            }
        }
    }
    write_metrics(opts.csv.empty() ? cfg.out + "/eval.csv" : opts.csv, rows);
    return rows;
}

// ---- lambda sweep -------------------------------------------------------

SweepOutput cmd_sweep_lambda(const ExperimentConfig& cfg) {
    cfg.validate();
    if (cfg.system != "gs") throw ConfigError("sweep-lambda requires system = gs");
    if (cfg.sweep.lambdas.empty() || cfg.sweep.models.empty()) throw ConfigError("sweep: empty lambda or model list");

    SweepOutput out;
    for (double lambda : cfg.sweep.lambdas) {
        ExperimentConfig data_cfg = cfg;
        data_cfg.datagen.lambda = lambda;
        data_cfg.out = cfg.out + "/lambda_" + fmt(lambda);
        data_cfg.datagen.train_path.clear();
        data_cfg.datagen.test_path.clear();

        // reuse data and finished (or interrupted) runs only when the data matches this config
        bool reuse = fs::exists(data_cfg.train_path()) && fs::exists(data_cfg.test_path());
        if (reuse) {
            const auto existing = datagen::read_dataset(data_cfg.train_path());
            reuse = same_param(existing.lambda, lambda) && existing.resolution == cfg.datagen.resolution &&
                    existing.sample_count() == cfg.datagen.train_samples &&
                    existing.master_seed == datagen::derive_seed(cfg.seed, 0, kTrainStream);
        }
        if (!reuse) {
            for (auto kind : cfg.sweep.models) fs::remove_all(data_cfg.out + "/" + model::to_string(kind));
            cmd_generate(data_cfg);
        }

        for (auto kind : cfg.sweep.models) {
            ExperimentConfig run = data_cfg;
            run.kind = kind;
            run.out = data_cfg.out + "/" + model::to_string(kind);
            run.datagen.train_path = data_cfg.train_path();
            run.datagen.test_path = data_cfg.test_path();
            run.eval.resolutions = {cfg.train.resolution};
            cmd_train(run, TrainOptions{true, 0});
            auto rows = cmd_eval(run);
            out.rows.insert(out.rows.end(), rows.begin(), rows.end());
        }
    }
    std::stable_sort(out.rows.begin(), out.rows.end(), [](const MetricsRow& a, const MetricsRow& b) {
        if (a.model != b.model) return a.model < b.model;
        if (a.param != b.param) return a.param < b.param;
        return a.variable < b.variable;
    });
    write_metrics(cfg.out + "/sweep.csv", out.rows);

    const auto [lo_it, hi_it] = std::minmax_element(cfg.sweep.lambdas.begin(), cfg.sweep.lambdas.end());
    const double lo = *lo_it, hi = *hi_it;
    std::map<std::pair<std::string, std::string>, Degradation> deg;
    for (const auto& r : out.rows) {
        auto& d = deg[{r.model, r.variable}];
        d.model = r.model;
        d.variable = r.variable;
        d.lambda_low = lo;
        d.lambda_high = hi;
        if (same_param(r.param, lo)) d.e_low = r.rel_l2;
        if (same_param(r.param, hi)) d.e_high = r.rel_l2;
    }
    std::string text = "model,variable,lambda_low,lambda_high,e_low,e_high,ratio\n";
    for (auto& [key, d] : deg) {
        d.ratio = d.e_low > 0.0 ? (d.e_high - d.e_low) / d.e_low : std::numeric_limits<double>::quiet_NaN();
        out.degradation.push_back(d);
        text += d.model + "," + d.variable + "," + fmt(d.lambda_low) + "," + fmt(d.lambda_high) + "," + fmt(d.e_low) +
                "," + fmt(d.e_high) + "," + fmt(d.ratio) + "\n";
    }
    write_text(cfg.out + "/degradation.csv", text);
    return out;
}

// ---- inspection ---------------------------------------------------------

int cmd_inspect(const InspectOptions& opts, std::ostream& out) {
    char buf[64];
    auto num = [&](double x) {
        std::snprintf(buf, sizeof buf, "%.17g", x);
        return std::string(buf);
    };

    if (opts.what == "filters") {
        const auto fb = mw::legendre_filters(opts.k);
        out << "matrix,row,col,value\n";
        const std::pair<const char*, const Eigen::MatrixXd*> mats[] = {
            {"h0", &fb.h0}, {"h1", &fb.h1}, {"g0", &fb.g0}, {"g1", &fb.g1}};
        for (const auto& [name, m] : mats)
            for (Eigen::Index i = 0; i < m->rows(); ++i)
                for (Eigen::Index j = 0; j < m->cols(); ++j)
                    out << name << "," << i << "," << j << "," << num((*m)(i, j)) << "\n";
        return 0;
    }

    if (opts.what == "coeffs") {
        datagen::Field f;
        if (opts.constant) {
            f.assign(opts.resolution, *opts.constant);
        } else {
            if (opts.dataset.empty()) throw ConfigError("inspect coeffs: need --dataset or --constant");
            const auto ds = datagen::read_dataset(opts.dataset);
            if (opts.sample >= ds.sample_count()) throw ConfigError("inspect coeffs: sample index out of range");
            const std::size_t v = opts.variable.empty() ? 0 : ds.variable_index(opts.variable);
            f = ds.field(opts.sample, v, ds.time_index(opts.time));
        }
        const int n = mw::exact_log2(f.size());
        const auto fb = mw::legendre_filters(opts.k);
        // Cell averages as V_n scaling coefficients: only the constant channel is populated.
        mw::Block x = mw::Block::Zero(static_cast<Eigen::Index>(f.size()), opts.k);
        const double scale = std::pow(2.0, -0.5 * n);
        for (std::size_t i = 0; i < f.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = f[i] * scale;
        const auto c = mw::forward_transform(x, fb, 0);
        double max_detail = 0.0;
        for (const auto& d : c.details) max_detail = std::max(max_detail, d.cwiseAbs().maxCoeff());
        out << "# max_abs_detail=" << num(max_detail) << "\n";
        out << "block,level,position,channel,value\n";
        for (std::size_t i = 0; i < c.details.size(); ++i)
            for (Eigen::Index p = 0; p < c.details[i].rows(); ++p)
                for (Eigen::Index ch = 0; ch < c.details[i].cols(); ++ch)
                    out << "detail," << c.floor + static_cast<int>(i) << "," << p << "," << ch << ","
                        << num(c.details[i](p, ch)) << "\n";
        for (Eigen::Index p = 0; p < c.coarse.rows(); ++p)
            for (Eigen::Index ch = 0; ch < c.coarse.cols(); ++ch)
                out << "coarse," << c.floor << "," << p << "," << ch << "," << num(c.coarse(p, ch)) << "\n";
        return 0;
    }

    if (opts.what == "gradcheck") {
        const auto results = gradcheck::run_suite(opts.seed);
        double worst = 0.0;
        out << "check,max_rel_error,directions\n";
        for (const auto& r : results) {
            out << r.name << "," << num(r.max_rel_error) << "," << r.directions << "\n";
            worst = std::max(worst, r.max_rel_error);
        }
        out << "# max_rel_error=" << num(worst) << (worst < 1e-4 ? " PASS" : " FAIL") << "\n";
        return worst < 1e-4 ? 0 : exit_code(ErrorKind::numeric);
    }

    throw ConfigError("inspect: unknown target '" + opts.what + "' (expected filters, coeffs or gradcheck)");
}

}  // namespace cmwno::harness
