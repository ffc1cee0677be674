// Command line front end: train, unlearn, retrain, benchmark and sweep
// graph models from a JSON config plus flag overrides.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gifkit/gifkit.hpp"

namespace fs = std::filesystem;
using namespace gifkit;

namespace {

struct Overrides {
    std::string config;
    std::string dataset;
    std::string backbone;
    std::string task;
    std::optional<double> ratio;
    std::vector<std::string> methods;
    std::string solver;
    std::optional<double> lambda;
    std::optional<std::size_t> iters;
    std::optional<double> gamma;
    std::vector<std::uint64_t> seeds;
    std::string out;
    std::string request;
    bool lambda_multiplies = false;
};

void add_common(CLI::App* cmd, Overrides& o) {
    cmd->add_option("--config", o.config, "JSON run configuration");
    cmd->add_option("--dataset", o.dataset,
                    "path prefix of <name>.content / <name>.cites, or 'sbm'");
    cmd->add_option("--backbone", o.backbone, "sgc, gcn1 or gcn2");
    cmd->add_option("--task", o.task, "node, edge or feature");
    cmd->add_option("--ratio", o.ratio, "share of elements to delete");
    cmd->add_option("--method", o.methods, "gif, if, retrain, closed-form")->delimiter(',');
    cmd->add_option("--solver", o.solver, "neumann or direct");
    cmd->add_option("--lambda", o.lambda, "Neumann scaling coefficient");
    cmd->add_option("--iters", o.iters, "Neumann iterations");
    cmd->add_option("--gamma", o.gamma, "l2 strength, shared by training and unlearning");
    cmd->add_option("--seed", o.seeds, "run seed(s)")->delimiter(',');
    cmd->add_option("--out", o.out, "output directory");
    cmd->add_option("--request", o.request, "request file");
    cmd->add_flag("--lambda-multiplies", o.lambda_multiplies,
                  "iterate with lambda * H and scale the estimate by lambda");
}

RunConfig resolve(const Overrides& o) {
    RunConfig cfg = o.config.empty() ? parse_config(Json::object()) : load_config(o.config);
    if (!o.dataset.empty()) {
        if (o.dataset == "sbm") {
            if (!cfg.dataset.sbm) cfg.dataset.sbm = SbmSpec{};
            cfg.dataset.content_path.clear();
            cfg.dataset.cites_path.clear();
            cfg.dataset.name = "sbm";
        } else {
            cfg.dataset.sbm.reset();
            cfg.dataset.content_path = o.dataset + ".content";
            cfg.dataset.cites_path = o.dataset + ".cites";
            cfg.dataset.name = fs::path(o.dataset).filename().string();
        }
    }
    if (!o.backbone.empty()) {
        const BackboneConfig old = cfg.backbone;
        cfg.backbone = BackboneConfig::for_kind(detail::parse_backbone(o.backbone));
        cfg.backbone.l2 = old.l2;
        cfg.backbone.epochs = old.epochs;
        cfg.backbone.seed = old.seed;
    }
    if (!o.task.empty()) cfg.experiment.task = detail::parse_task(o.task);
    if (o.ratio) cfg.experiment.ratio = *o.ratio;
    if (!o.methods.empty()) {
        cfg.experiment.methods.clear();
        for (const auto& m : o.methods) cfg.experiment.methods.push_back(detail::parse_method(m));
    }
    if (!o.solver.empty()) cfg.gif.solver = detail::parse_solver(o.solver);
    if (o.lambda) cfg.gif.lambda = *o.lambda;
    if (o.iters) cfg.gif.iterations = *o.iters;
    if (o.gamma) cfg.backbone.l2 = *o.gamma;
    cfg.gif.l2 = cfg.backbone.l2;
    if (!o.seeds.empty()) {
        cfg.experiment.seeds = o.seeds;
        cfg.backbone.seed = o.seeds.front();
    }
    if (!o.out.empty()) cfg.out = o.out;
    if (!o.request.empty()) cfg.request_path = o.request;
    if (o.lambda_multiplies) cfg.gif.lambda_multiplies = true;
    finalize_config(cfg);
    return cfg;
}

LoadedDataset load(const RunConfig& cfg) {
    LoadedDataset d = load_dataset(cfg.dataset);
    for (const auto& w : d.warnings) std::cerr << "warning: " << w << '\n';
    return d;
}

void finish(const Report& r, const RunConfig& cfg) {
    write_report(cfg.out, r, cfg);
    for (const auto& a : r.aggregates) {
        std::printf("%-12s param=%-10s n=%zu failed=%zu f1=%.4f+-%.4f time=%.4fs\n",
                    a.method.c_str(), format_number(a.param).c_str(), a.count, a.failed,
                    a.f1_mean, a.f1_std, a.seconds_mean);
    }
}

void write_params(const fs::path& path, const ModelParams& p) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    for (Eigen::Index i = 0; i < p.size(); ++i) out << format_number(p.flat()(i)) << '\n';
}

int cmd_train(const RunConfig& cfg) {
    const LoadedDataset d = load(cfg);
    const GraphModel model(d.graph, cfg.backbone);
    const TrainedModel t = train(model);
    Report r{"train", cfg.dataset.name, {}, {}};
    ReportRow row;
    row.method = "train";
    row.seed = cfg.backbone.seed;
    row.f1 = test_f1(model, t.params);
    row.delta_norm = t.params.flat().norm();
    row.residual = t.objective_gradient.cwiseAbs().maxCoeff();
    r.rows.push_back(row);
    r.aggregate();
    finish(r, cfg);
    write_params(cfg.out / "params.txt", t.params);
    return 0;
}

/// One request against one trained model, with the methods in the config.
int cmd_single(const RunConfig& cfg, const std::vector<Method>& methods, const char* name) {
    const LoadedDataset d = load(cfg);
    if (cfg.request_path.empty()) throw ConfigError("--request is required");
    const UnlearnRequest request = read_request(cfg.request_path, d.ids);
    request.validate(d.graph);
    const GraphModel model(d.graph, cfg.backbone);
    const TrainedModel t = train(model);
    Report r{name, cfg.dataset.name, {}, {}};
    r.rows = detail::run_methods(model, t, request, methods, cfg.gif, cfg.backbone.seed, 0.0);
    r.aggregate();
    finish(r, cfg);
    return 0;
}

int cmd_unlearn(const RunConfig& cfg, bool methods_given) {
    std::vector<Method> methods;
    if (methods_given) {
        for (Method m : cfg.experiment.methods)
            if (m != Method::Retrain) methods.push_back(m);
    }
    if (methods.empty())
        methods.push_back(cfg.gif.method == UnlearnMethod::Gif ? Method::Gif : Method::TraditionalIf);
    return cmd_single(cfg, methods, "unlearn");
}

int cmd_gen_sbm(const RunConfig& cfg) {
    const LoadedDataset d = load(cfg);
    const Graph& g = d.graph;
    fs::create_directories(cfg.out);
    std::ofstream edges(cfg.out / "edges.txt"), feats(cfg.out / "features.csv");
    if (!edges || !feats) throw IoError("cannot write into " + cfg.out.string());
    for (const auto& e : g.edges()) edges << e.u << ' ' << e.v << '\n';
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
        feats << v << ',' << g.labels()[v] << ',' << (g.is_train(v) ? "train" : "test");
        for (Eigen::Index j = 0; j < g.features().cols(); ++j)
            feats << ',' << format_number(g.features()(static_cast<Eigen::Index>(v), j));
        feats << '\n';
    }
    std::printf("%zu nodes, %zu edges, %zu features, %d classes\n", g.num_nodes(), g.num_edges(),
                g.feature_dim(), g.num_classes());
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Graph unlearning with influence functions"};
    app.require_subcommand(1);
    Overrides o;
    std::string sweep_kind = "lambda";
    std::string edges_path, features_path, prefix;

    std::vector<std::pair<std::string, std::string>> names{
        {"train", "train a backbone and report test micro-F1"},
        {"unlearn", "apply a request file with gif, if or closed-form"},
        {"retrain", "retrain from scratch without the requested elements"},
        {"bench", "utility and timing benchmark over seeds"},
        {"attack-eval", "inject cross-label edges and unlearn them"},
        {"sweep", "lambda or unlearning-ratio sweep"},
        {"gen-sbm", "write a stochastic block model graph"}};
    std::vector<CLI::App*> cmds;
    for (const auto& [n, help] : names) {
        auto* c = app.add_subcommand(n, help);
        add_common(c, o);
        cmds.push_back(c);
    }
    cmds[5]->add_option("--kind", sweep_kind, "lambda or ratio")
        ->check(CLI::IsMember({"lambda", "ratio"}));
    auto* convert = app.add_subcommand("convert", "edge list + feature CSV to .content/.cites");
    convert->add_option("--edges", edges_path, "edge list, one 'a b' pair per line")->required();
    convert->add_option("--features", features_path, "CSV rows id,label,f1,...,fF")->required();
    convert->add_option("--out", prefix, "output path prefix")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (convert->parsed()) {
            const std::size_t dropped = convert_edge_list(edges_path, features_path, prefix);
            if (dropped) std::cerr << "warning: " << dropped << " edges with unknown ids dropped\n";
            return 0;
        }
        const RunConfig cfg = resolve(o);
        const std::string name = app.get_subcommands().front()->get_name();
        if (name == "train") return cmd_train(cfg);
        if (name == "unlearn") return cmd_unlearn(cfg, !o.methods.empty());
        if (name == "retrain") return cmd_single(cfg, {Method::Retrain}, "retrain");
        if (name == "gen-sbm") return cmd_gen_sbm(cfg);
        const LoadedDataset d = load(cfg);
        Report r;
        if (name == "bench") r = utility_benchmark(cfg.experiment, d.graph);
        else if (name == "attack-eval") r = efficacy_experiment(cfg.experiment, d.graph);
        else r = sweep_kind == "lambda" ? lambda_sweep(cfg.experiment, d.graph)
                                        : ratio_sweep(cfg.experiment, d.graph);
        finish(r, cfg);
        return 0;
    } catch (const Error& e) {
        std::cerr << "error: " << e.code() << ": " << e.what() << '\n';
        return e.exit_status();
    } catch (const std::exception& e) {
        std::cerr << "error: E_INTERNAL: " << e.what() << '\n';
        return 1;
    }
}
