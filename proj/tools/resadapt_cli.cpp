// resadapt command-line driver.
//
// Exit codes: 0 success, 1 usage error, 2 numeric or validation failure.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "resadapt/checkpoint.hpp"
#include "resadapt/dataset.hpp"
#include "resadapt/digest.hpp"
#include "resadapt/errors.hpp"
#include "resadapt/gradcheck_suite.hpp"
#include "resadapt/network.hpp"
#include "resadapt/tensor_io.hpp"
#include "resadapt/trainer.hpp"

namespace fs = std::filesystem;
using namespace resadapt;

namespace {

/// Raised for malformed flag values; maps to exit code 1.
struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Flag registry: every option is held as a string so that the resolved
// configuration can be echoed verbatim and config files can fill the gaps.
// ---------------------------------------------------------------------------

class Flags {
public:
    explicit Flags(CLI::App* app) : app_(app) {}

    void add(const std::string& key, std::string fallback, const std::string& help) {
        values_[key] = std::move(fallback);
        opts_[key] = app_->add_option("--" + key, values_[key], help)->capture_default_str();
        order_.push_back(key);
    }

    const std::string& str(const std::string& key) const { return values_.at(key); }
    bool given(const std::string& key) const { return !values_.at(key).empty(); }

    double number(const std::string& key) const {
        const std::string& s = str(key);
        try {
            std::size_t pos = 0;
            const double v = std::stod(s, &pos);
            if (pos == s.size()) {
                return v;
            }
        } catch (const std::exception&) {
        }
        throw UsageError("--" + key + " expects a number, got '" + s + "'");
    }

    std::uint64_t integer(const std::string& key) const {
        const std::string& s = str(key);
        try {
            std::size_t pos = 0;
            const unsigned long long v = std::stoull(s, &pos);
            if (pos == s.size() && s.find('-') == std::string::npos) {
                return v;
            }
        } catch (const std::exception&) {
        }
        throw UsageError("--" + key + " expects a non-negative integer, got '" + s + "'");
    }

    bool boolean(const std::string& key) const {
        const std::string& s = str(key);
        if (s == "true" || s == "1" || s == "yes" || s == "on") {
            return true;
        }
        if (s == "false" || s == "0" || s == "no" || s == "off") {
            return false;
        }
        throw UsageError("--" + key + " expects true|false, got '" + s + "'");
    }

    /// Fills every option not given on the command line from a key=value file.
    void apply_config(const fs::path& path) {
        std::ifstream in(path);
        if (!in) {
            throw UsageError("cannot read config file " + path.string());
        }
        std::stringstream buf;
        buf << in.rdbuf();
        for (auto& [key, value] : parse_key_values(buf.str(), path.string())) {
            auto it = opts_.find(key);
            if (it == opts_.end() || key == "config") {
                throw UsageError(path.string() + ": unknown key '" + key + "' for command " + app_->get_name());
            }
            if (it->second->count() == 0) {
                values_[key] = value;
            }
        }
    }

    std::vector<std::pair<std::string, std::string>> resolved() const {
        std::vector<std::pair<std::string, std::string>> out;
        for (const auto& k : order_) {
            out.emplace_back(k, values_.at(k));
        }
        return out;
    }

private:
    CLI::App* app_;
    std::map<std::string, std::string> values_;
    std::map<std::string, CLI::Option*> opts_;
    std::vector<std::string> order_;
};

std::vector<std::string> split_list(const std::string& s, char sep = ',') {
    std::vector<std::string> out;
    std::stringstream in(s);
    std::string item;
    while (std::getline(in, item, sep)) {
        if (!item.empty()) {
            out.push_back(item);
        }
    }
    return out;
}

template <typename F>
auto usage_guard(F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const ConfigError& e) {
        throw UsageError(e.what());
    }
}

// ---------------------------------------------------------------------------
// Run context: output directory, manifest and resolved-config echo.
// ---------------------------------------------------------------------------

class Run {
public:
    Run(std::string command, const Flags& flags, std::vector<std::string> argv)
        : command_(std::move(command)), flags_(flags), argv_(std::move(argv)) {
        out_ = flags.str("out");
        fs::create_directories(out_);
    }

    const fs::path& out() const { return out_; }

    void input(const std::string& label, const fs::path& path) {
        if (fs::is_directory(path)) {
            for (const char* f : {"images.mdtb", "labels.mdtb", "meta.txt"}) {
                inputs_.emplace_back(label + "/" + f, file_digest(path / f));
            }
        } else {
            inputs_.emplace_back(label, file_digest(path));
        }
    }

    void output(const std::string& name) { outputs_.push_back(name); }
    void note(const std::string& key, const std::string& value) { notes_.emplace_back(key, value); }

    void write_text(const std::string& name, const std::string& text) {
        write_file_atomic(out_ / name, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
        output(name);
    }

    void finish() {
        std::ostringstream m;
        m << "command = " << command_ << "\n";
        std::string joined;
        for (const auto& a : argv_) {
            joined += (joined.empty() ? "" : " ") + a;
        }
        m << "argv = " << joined << "\n";
        for (const auto& [k, v] : flags_.resolved()) {
            m << "config." << k << " = " << v << "\n";
        }
        for (const auto& [k, v] : notes_) {
            m << k << " = " << v << "\n";
        }
        for (const auto& [k, v] : inputs_) {
            m << "input." << k << " = " << v << "\n";
        }
        for (const auto& name : outputs_) {
            m << "output." << name << " = " << file_digest(out_ / name) << "\n";
        }
        const std::string text = m.str();
        write_file_atomic(out_ / "manifest.txt", std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
    }

private:
    std::string command_;
    const Flags& flags_;
    std::vector<std::string> argv_;
    fs::path out_;
    std::vector<std::pair<std::string, std::string>> inputs_;
    std::vector<std::pair<std::string, std::string>> notes_;
    std::vector<std::string> outputs_;
};

void echo_config(const std::string& command, const Flags& flags) {
    std::cout << "# " << command << " resolved configuration\n";
    for (const auto& [k, v] : flags.resolved()) {
        std::cout << "#   " << k << " = " << v << "\n";
    }
}

// ---------------------------------------------------------------------------
// Shared flag groups
// ---------------------------------------------------------------------------

void add_common(Flags& f, const std::string& precision_default) {
    f.add("config", "", "key=value file; command-line flags take precedence");
    f.add("seed", "0", "random seed");
    f.add("precision", precision_default, "single|double|auto (auto follows the input checkpoint)");
    f.add("out", "resadapt_out", "output directory");
}

void add_training(Flags& f, const std::string& epochs, const std::string& lr) {
    f.add("epochs", epochs, "training epochs");
    f.add("batch-size", "32", "mini-batch size");
    f.add("lr", lr, "initial learning rate");
    f.add("lr-milestones", "0.6,0.8", "fractions of the run at which the rate drops");
    f.add("lr-factor", "0.1", "learning-rate drop factor");
    f.add("momentum", "0.9", "SGD momentum");
    f.add("wd", "auto", "weight decay value or 'auto' (tiered by training-set size)");
    f.add("wd-overrides", "", "per-domain weight decay, e.g. aircraft:0.002,svhn:0.0001");
    f.add("eval-every-epoch", "false", "validate after every epoch");
}

TrainConfig training_config(const Flags& f, Regime regime) {
    TrainConfig tc;
    tc.epochs = f.integer("epochs");
    tc.batch_size = f.integer("batch-size");
    tc.lr.initial = f.number("lr");
    tc.lr.milestones.clear();
    for (const auto& m : split_list(f.str("lr-milestones"))) {
        try {
            tc.lr.milestones.push_back(std::stod(m));
        } catch (const std::exception&) {
            throw UsageError("--lr-milestones expects comma-separated fractions");
        }
    }
    tc.lr.factor = f.number("lr-factor");
    tc.momentum = f.number("momentum");
    tc.regime = regime;
    if (f.str("wd") != "auto") {
        tc.weight_decay_value = f.number("wd");
    }
    for (const auto& item : split_list(f.str("wd-overrides"))) {
        const auto colon = item.find(':');
        if (colon == std::string::npos) {
            throw UsageError("--wd-overrides entries must be domain:value");
        }
        try {
            tc.weight_decay.overrides[item.substr(0, colon)] = std::stod(item.substr(colon + 1));
        } catch (const std::exception&) {
            throw UsageError("--wd-overrides entries must be domain:value");
        }
    }
    tc.seed = f.integer("seed");
    tc.eval_every_epoch = f.boolean("eval-every-epoch");
    usage_guard([&] { tc.validate(); });
    return tc;
}

void add_network(Flags& f) {
    f.add("widths", "16,32,64", "macro-block widths");
    f.add("blocks", "2", "residual blocks per macro-block");
    f.add("width-multiplier", "1", "scales every width");
    f.add("filter-size", "3", "odd spatial filter extent");
}

NetworkConfig network_config(const Flags& f) {
    NetworkConfig cfg;
    const auto w = split_list(f.str("widths"));
    if (w.size() != 3) {
        throw UsageError("--widths expects three comma-separated values");
    }
    for (std::size_t i = 0; i < 3; ++i) {
        try {
            cfg.widths[i] = std::stoul(w[i]);
        } catch (const std::exception&) {
            throw UsageError("--widths expects integers");
        }
    }
    cfg.blocks_per_macro = f.integer("blocks");
    cfg.width_multiplier = f.number("width-multiplier");
    cfg.filter_size = f.integer("filter-size");
    usage_guard([&] { cfg.validate(); });
    return cfg;
}

Precision resolve_precision(const Flags& f, const Checkpoint* ckpt) {
    const std::string& p = f.str("precision");
    if (p == "single") {
        return Precision::Single;
    }
    if (p == "double") {
        return Precision::Double;
    }
    if (p == "auto") {
        return ckpt ? checkpoint_precision(*ckpt) : Precision::Single;
    }
    throw UsageError("--precision expects single|double|auto, got '" + p + "'");
}

template <typename Fn>
void dispatch(Precision p, Fn&& fn) {
    if (p == Precision::Double) {
        fn(double{});
    } else {
        fn(float{});
    }
}

std::string precision_name(Precision p) { return p == Precision::Double ? "double" : "single"; }

Dataset load_data(Run& run, const Flags& f, const std::string& key) {
    if (!f.given(key)) {
        throw UsageError("--" + key + " is required");
    }
    run.input(key, f.str(key));
    return load_dataset(f.str(key));
}

std::optional<Dataset> load_optional(Run& run, const Flags& f, const std::string& key) {
    if (!f.given(key)) {
        return std::nullopt;
    }
    return load_data(run, f, key);
}

Checkpoint load_ckpt(Run& run, const Flags& f, const std::string& key) {
    if (!f.given(key)) {
        throw UsageError("--" + key + " is required");
    }
    run.input(key, f.str(key));
    return load_checkpoint(f.str(key));
}

template <typename T>
void save_model(Run& run, const Network<T>& net) {
    save_checkpoint(run.out() / "model.mdck", to_checkpoint(net));
    run.output("model.mdck");
}

void save_report(Run& run, const RunReport& report) {
    report.write_csv(run.out() / "report.csv");
    run.output("report.csv");
    report.write_summary(run.out() / "summary.txt");
    run.output("summary.txt");
}

std::string pct(double v) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << 100.0 * v << "%";
    return s.str();
}

void print_report(const RunReport& r) {
    std::cout << r.command << " domain=" << r.domain << " train_acc=" << pct(r.final_train_accuracy);
    if (r.final_val_accuracy) {
        std::cout << " val_acc=" << pct(*r.final_val_accuracy);
    }
    std::cout << " wd=" << r.weight_decay << " trainable=" << r.trainable_params << "\n";
    std::cout << "universal digest " << r.universal_digest_before << " -> " << r.universal_digest_after << "\n";
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_gen_data(const Flags& f, Run& run) {
    SyntheticDomainSpec spec;
    spec.name = f.str("name");
    spec.seed = f.integer("seed");
    spec.num_classes = f.integer("classes");
    spec.images_per_class = f.integer("per-class");
    spec.height = spec.width = f.integer("size");
    spec.palette_rotation = f.number("rotation");
    spec.frequency = f.number("frequency");
    spec.noise_sigma = f.number("sigma");
    spec.phase_jitter = f.number("jitter");
    const Dataset ds = usage_guard([&] { return generate_domain(spec); });
    save_dataset(run.out(), ds);
    for (const char* name : {"images.mdtb", "labels.mdtb", "meta.txt"}) {
        run.output(name);
    }
    std::cout << "wrote " << ds.size() << " images (" << ds.images.shape().str() << ") to " << run.out().string()
              << "\n";
    return 0;
}

int cmd_train_base(const Flags& f, Run& run) {
    const NetworkConfig cfg = network_config(f);
    const TrainConfig tc = training_config(f, Regime::FinetuneAll);
    Dataset train = load_data(run, f, "data");
    const auto val = load_optional(run, f, "val");
    if (f.number("fraction") != 1.0) {
        train = usage_guard([&] { return subsample(train, f.number("fraction"), tc.seed); });
    }
    const Precision p = resolve_precision(f, nullptr);
    run.note("precision", precision_name(p));
    dispatch(p, [&](auto tag) {
        using T = decltype(tag);
        RunReport report;
        const Network<T> net = usage_guard(
            [&] { return train_base<T>(cfg, f.str("domain"), train, val ? &*val : nullptr, tc, report); });
        save_model(run, net);
        save_report(run, report);
        print_report(report);
    });
    return 0;
}

PlacementConfig placement_from(const Flags& f) {
    return usage_guard([&] {
        PlacementConfig p;
        p.macros = parse_macros(f.str("placement"));
        p.within = parse_within(f.str("within"));
        p.topology = parse_topology(f.str("topology"));
        p.series_bn = f.boolean("series-bn");
        if (f.str("dropout") != "off") {
            p.dropout = f.number("dropout");
        }
        return p;
    });
}

int cmd_train_domain(const Flags& f, Run& run) {
    const Checkpoint ckpt = load_ckpt(run, f, "base");
    const Regime regime = usage_guard([&] { return parse_regime(f.str("regime")); });
    const TrainConfig tc = training_config(f, regime);
    const PlacementConfig placement = placement_from(f);
    Dataset train = load_data(run, f, "data");
    const auto val = load_optional(run, f, "val");
    if (f.number("fraction") != 1.0) {
        train = usage_guard([&] { return subsample(train, f.number("fraction"), tc.seed); });
    }
    if (!f.given("domain")) {
        throw UsageError("--domain is required");
    }
    const Precision p = resolve_precision(f, &ckpt);
    run.note("precision", precision_name(p));
    dispatch(p, [&](auto tag) {
        using T = decltype(tag);
        Network<T> net = from_checkpoint<T>(ckpt);
        std::string base = f.str("base-domain");
        if (base.empty()) {
            const auto ids = net.domain_ids();
            if (ids.empty()) {
                throw UsageError("base checkpoint has no domain to clone");
            }
            base = ids.front();
        }
        const RunReport report = usage_guard([&] {
            return train_domain<T>(net, base, f.str("domain"), placement, train, val ? &*val : nullptr, tc);
        });
        save_model(run, net);
        save_report(run, report);
        print_report(report);
    });
    return 0;
}

int cmd_eval(const Flags& f, Run& run) {
    const Checkpoint ckpt = load_ckpt(run, f, "ckpt");
    const Dataset ds = load_data(run, f, "data");
    const Precision p = resolve_precision(f, &ckpt);
    run.note("precision", precision_name(p));
    dispatch(p, [&](auto tag) {
        using T = decltype(tag);
        const Network<T> net = from_checkpoint<T>(ckpt);
        const EvalResult r = usage_guard([&] { return evaluate(net, f.str("domain"), ds); });
        std::ostringstream s;
        s << std::setprecision(17) << "domain = " << f.str("domain") << "\naccuracy = " << r.accuracy
          << "\nloss = " << r.loss << "\ncount = " << r.count << "\n";
        run.write_text("eval.txt", s.str());
        std::cout << "domain=" << f.str("domain") << " accuracy=" << pct(r.accuracy) << " loss=" << r.loss
                  << " n=" << r.count << "\n";
    });
    return 0;
}

int cmd_fuse(const Flags& f, Run& run, bool fuse) {
    const Checkpoint ckpt = load_ckpt(run, f, "ckpt");
    const Precision p = resolve_precision(f, &ckpt);
    if (p != checkpoint_precision(ckpt)) {
        throw UsageError("fuse/unfuse keep the checkpoint's own precision; drop --precision");
    }
    dispatch(p, [&](auto tag) {
        using T = decltype(tag);
        Network<T> net = from_checkpoint<T>(ckpt);
        usage_guard([&] { fuse ? net.fuse_domain(f.str("domain")) : net.unfuse_domain(f.str("domain")); });
        save_model(run, net);
        std::cout << (fuse ? "fused" : "unfused") << " domain " << f.str("domain") << "\n";
    });
    return 0;
}

int cmd_compress(const Flags& f, Run& run) {
    const Checkpoint ckpt = load_ckpt(run, f, "ckpt");
    const RankSpec rank = usage_guard([&] { return RankSpec::parse(f.str("rank")); });
    const auto domains = split_list(f.str("domains"));
    if (domains.empty()) {
        throw UsageError("--domains expects a comma-separated list");
    }
    const Precision p = resolve_precision(f, &ckpt);
    run.note("precision", precision_name(p));
    dispatch(p, [&](auto tag) {
        using T = decltype(tag);
        Network<T> net = from_checkpoint<T>(ckpt);
        const CompressionReport rep = usage_guard([&] { return compress_adapters<T>(net, domains, rank); });
        std::ostringstream csv;
        csv << std::setprecision(17) << "layer,channels,rank,relative_error,stored_before,stored_after\n";
        for (const auto& l : rep.layers) {
            csv << l.layer << "," << l.channels << "," << l.rank << "," << l.relative_error << "," << l.stored_before
                << "," << l.stored_after << "\n";
        }
        run.write_text("compression.csv", csv.str());
        save_model(run, net);
        std::cout << "compressed " << rep.layers.size() << " layers over " << domains.size()
                  << " domains: adapter storage " << rep.stored_before << " -> " << rep.stored_after << "\n";
    });
    return 0;
}

int cmd_finetune_gamma(const Flags& f, Run& run) {
    const Checkpoint ckpt = load_ckpt(run, f, "fact");
    const TrainConfig tc = training_config(f, Regime::GammasOnly);
    const Dataset train = load_data(run, f, "data");
    const auto val = load_optional(run, f, "val");
    const Precision p = resolve_precision(f, &ckpt);
    run.note("precision", precision_name(p));
    dispatch(p, [&](auto tag) {
        using T = decltype(tag);
        Network<T> net = from_checkpoint<T>(ckpt);
        const RunReport report =
            usage_guard([&] { return finetune_gammas<T>(net, f.str("domain"), train, val ? &*val : nullptr, tc); });
        save_model(run, net);
        save_report(run, report);
        print_report(report);
        std::cout << "beta digest " << report.beta_digest_before << " -> " << report.beta_digest_after << "\n";
    });
    return 0;
}

int cmd_report_params(const Flags& f, Run& run) {
    std::optional<Checkpoint> ckpt;
    if (f.given("ckpt")) {
        ckpt = load_ckpt(run, f, "ckpt");
    }
    const PlacementConfig placement = placement_from(f);
    const Precision p = resolve_precision(f, ckpt ? &*ckpt : nullptr);
    dispatch(p, [&](auto tag) {
        using T = decltype(tag);
        std::optional<Network<T>> net;
        if (ckpt) {
            net.emplace(from_checkpoint<T>(*ckpt));
        } else {
            CounterRng rng(f.integer("seed"));
            net.emplace(network_config(f), rng);
        }
        const BudgetReport b = count_params(*net, placement);
        std::ostringstream s;
        s << "weight_layers = " << b.weight_layers << "\n";
        s << "widths = " << b.widths[0] << "/" << b.widths[1] << "/" << b.widths[2] << "\n";
        s << "universal_params = " << b.universal << "\n";
        s << "shared_beta_params = " << b.shared_betas << "\n";
        for (const auto& d : b.domains) {
            s << "domain." << d.id << ".adapters = " << d.adapters << "\n";
            s << "domain." << d.id << ".batch_norm = " << d.batch_norm << "\n";
            s << "domain." << d.id << ".head = " << d.head << "\n";
            s << "domain." << d.id << ".own_universal = " << d.own_universal << "\n";
            s << "domain." << d.id << ".total = " << d.total() << "\n";
        }
        s << std::setprecision(10) << "budget_factor = " << b.budget_factor << "\n";
        s << "planned_adapter_params = " << b.planned_adapter_params << " (placement "
          << macros_to_string(placement.macros) << ", " << to_string(placement.within) << ", "
          << to_string(placement.topology) << ")\n";
        s << "layer,macro,in,out,conv_params,adapter_params,adapter_storage\n";
        const auto ids = net->domain_ids();
        for (const auto& l : b.layers) {
            // Adapter storage actually held at this layer across all domains.
            std::size_t stored = 0;
            const std::size_t index = l.layer - 1;
            if (auto it = net->shared_betas().find(index); it != net->shared_betas().end()) {
                stored += std::size_t(it->second.size());
            }
            for (const auto& id : ids) {
                const auto& d = net->domain(id);
                if (auto a = d.alphas.find(index); a != d.alphas.end()) {
                    stored += std::size_t(a->second.size());
                }
                if (auto g = d.gammas.find(index); g != d.gammas.end()) {
                    stored += std::size_t(g->second.size());
                }
            }
            s << l.layer << "," << l.macro << "," << l.in_channels << "," << l.out_channels << "," << l.conv_params
              << "," << l.adapter_params << "," << stored << "\n";
        }
        run.write_text("params.txt", s.str());
        std::cout << s.str();
    });
    return 0;
}

int cmd_gradcheck(const Flags& f, Run& run) {
    if (resolve_precision(f, nullptr) != Precision::Double) {
        throw UsageError("gradcheck runs in double precision only");
    }
    const double tol = f.number("tolerance");
    const auto trials = f.integer("trials");
    const GradSuiteReport rep = run_gradcheck_suite(f.integer("seed"), trials);
    std::ostringstream s;
    s << std::setprecision(6) << std::scientific;
    s << "check,max_relative_error,checked,skipped\n";
    for (const auto& r : rep.reports) {
        s << '"' << r.name << "\"," << r.max_relative_error << "," << r.checked << "," << r.skipped << "\n";
    }
    run.write_text("gradcheck.csv", s.str());
    const auto* worst = rep.worst();
    std::cout << std::setprecision(3) << std::scientific << "gradcheck: " << rep.trials << " trials, "
              << rep.reports.size() << " checks, max relative error " << rep.max_error();
    if (worst) {
        std::cout << " (" << worst->name << ")";
    }
    std::cout << ", tolerance " << tol << "\n";
    if (!rep.passed(tol)) {
        std::cout << "gradcheck FAILED\n";
        return 2;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"resadapt: residual adapters for multi-domain convolutional networks"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Expand help for every command");

    struct Command {
        CLI::App* app;
        std::unique_ptr<Flags> flags;
        std::function<int(const Flags&, Run&)> run;
    };
    std::vector<Command> commands;
    auto make = [&](const std::string& name, const std::string& help, const std::string& precision,
                    std::function<int(const Flags&, Run&)> fn) -> Flags& {
        CLI::App* sub = app.add_subcommand(name, help);
        auto flags = std::make_unique<Flags>(sub);
        add_common(*flags, precision);
        Flags& ref = *flags;
        commands.push_back({sub, std::move(flags), std::move(fn)});
        return ref;
    };

    {
        Flags& f = make("gen-data", "Render a synthetic grating domain", "single", cmd_gen_data);
        f.add("name", "synthetic", "dataset name");
        f.add("classes", "5", "number of classes");
        f.add("per-class", "100", "images per class");
        f.add("size", "32", "image height and width");
        f.add("rotation", "0", "palette rotation (radians)");
        f.add("frequency", "3", "grating periods across the image");
        f.add("sigma", "0.1", "pixel noise standard deviation");
        f.add("jitter", "0", "per-image phase jitter bound (radians)");
    }
    {
        Flags& f = make("train-base", "Train universal filters and a first domain", "single", cmd_train_base);
        f.add("data", "", "training dataset directory");
        f.add("val", "", "validation dataset directory");
        f.add("domain", "base", "id of the base domain");
        f.add("fraction", "1", "stratified fraction of the training data to use");
        add_network(f);
        add_training(f, "10", "0.05");
    }
    {
        Flags& f = make("train-domain", "Attach and train a new domain on a base checkpoint", "auto",
                        cmd_train_domain);
        f.add("base", "", "base checkpoint");
        f.add("base-domain", "", "domain whose BN statistics seed the new domain (default: first)");
        f.add("data", "", "training dataset directory");
        f.add("val", "", "validation dataset directory");
        f.add("domain", "", "id of the new domain");
        f.add("regime", "adapters_only", "finetune_all|adapters_only|head_only");
        f.add("topology", "parallel", "series|parallel");
        f.add("placement", "all", "all|none|early|mid|late or a '+'-joined subset");
        f.add("within", "both", "both|second");
        f.add("series-bn", "true", "normalize the series adapter branch");
        f.add("dropout", "off", "dropout before the second adapted conv of each block, or off");
        f.add("fraction", "1", "stratified fraction of the training data to use");
        add_training(f, "10", "0.05");
    }
    {
        Flags& f = make("eval", "Top-1 accuracy of a domain", "auto", cmd_eval);
        f.add("ckpt", "", "checkpoint");
        f.add("domain", "base", "domain id");
        f.add("data", "", "dataset directory");
    }
    {
        Flags& f = make("fuse", "Fold a domain's adapters into per-domain filters", "auto",
                        [](const Flags& fl, Run& r) { return cmd_fuse(fl, r, true); });
        f.add("ckpt", "", "checkpoint");
        f.add("domain", "", "domain id");
    }
    {
        Flags& f = make("unfuse", "Drop fused filters after verifying they unfold exactly", "auto",
                        [](const Flags& fl, Run& r) { return cmd_fuse(fl, r, false); });
        f.add("ckpt", "", "checkpoint");
        f.add("domain", "", "domain id");
    }
    {
        Flags& f = make("compress", "Jointly factorize adapters across domains", "auto", cmd_compress);
        f.add("ckpt", "", "checkpoint");
        f.add("domains", "", "comma-separated domain ids");
        f.add("rank", "half", "retained rank K, 'half' or 'full'");
    }
    {
        Flags& f = make("finetune-gamma", "Fine-tune one domain's gammas with betas frozen", "auto",
                        cmd_finetune_gamma);
        f.add("fact", "", "compressed checkpoint");
        f.add("domain", "", "domain id");
        f.add("data", "", "training dataset directory");
        f.add("val", "", "validation dataset directory");
        add_training(f, "3", "0.01");
    }
    {
        Flags& f = make("report-params", "Parameter budget of a checkpoint or configuration", "auto",
                        cmd_report_params);
        f.add("ckpt", "", "checkpoint (omit to report a freshly built network)");
        add_network(f);
        f.add("topology", "parallel", "series|parallel");
        f.add("placement", "all", "all|none|early|mid|late or a '+'-joined subset");
        f.add("within", "both", "both|second");
        f.add("series-bn", "true", "normalize the series adapter branch");
        f.add("dropout", "off", "unused; accepted for symmetry with train-domain");
    }
    {
        Flags& f = make("gradcheck", "Finite-difference check of every differentiable op", "double", cmd_gradcheck);
        f.add("tolerance", "1e-6", "maximum relative error");
        f.add("trials", "60", "randomized trials");
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    std::vector<std::string> args(argv, argv + argc);
    for (auto& c : commands) {
        if (!c.app->parsed()) {
            continue;
        }
        const std::string name = c.app->get_name();
        try {
            if (c.flags->given("config")) {
                c.flags->apply_config(c.flags->str("config"));
            }
            echo_config(name, *c.flags);
            Run run(name, *c.flags, args);
            const int code = c.run(*c.flags, run);
            run.finish();
            return code;
        } catch (const UsageError& e) {
            std::cerr << name << ": " << e.what() << "\n" << c.app->help();
            return 1;
        } catch (const ConfigError& e) {
            std::cerr << name << ": " << e.what() << "\n";
            return 1;
        } catch (const NumericError& e) {
            std::cerr << name << ": numeric failure: " << e.what() << "\n";
            return 2;
        } catch (const IntegrityError& e) {
            std::cerr << name << ": integrity failure: " << e.what() << "\n";
            return 2;
        } catch (const FormatError& e) {
            std::cerr << name << ": invalid input: " << e.what() << "\n";
            return 2;
        } catch (const fs::filesystem_error& e) {
            std::cerr << name << ": " << e.what() << "\n";
            return 2;
        }
    }
    return 1;
}
