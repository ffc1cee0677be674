#ifndef GIFKIT_EVAL_HPP
#define GIFKIT_EVAL_HPP

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <exception>
#include <limits>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "backbone.hpp"
#include "errors.hpp"
#include "gif.hpp"
#include "graph.hpp"

namespace gifkit {

enum class Method { Retrain, Gif, TraditionalIf, ClosedForm };

inline const char* to_string(Method m) {
    switch (m) {
    case Method::Retrain: return "retrain";
    case Method::Gif: return "gif";
    case Method::TraditionalIf: return "if";
    case Method::ClosedForm: return "closed-form";
    }
    return "?";
}

struct ExperimentSpec {
    std::string dataset = "graph";
    BackboneConfig backbone;
    GifConfig gif;
    RequestKind task = RequestKind::Edge;
    /// Share of eligible elements (training nodes, edges, or training
    /// feature rows) deleted per request.
    double ratio = 0.05;
    /// Adversarial edges injected, as a share of the clean edge count.
    std::vector<double> attack_grid{0.1, 0.3, 0.5, 0.7, 0.9};
    std::vector<Method> methods{Method::Retrain, Method::Gif};
    std::vector<double> lambda_grid{1e1, 1e2, 1e3, 1e4, 1e5};
    std::vector<double> ratio_grid{0.1, 0.2, 0.3, 0.4, 0.5};
    std::vector<std::uint64_t> seeds{0};
    std::size_t repetitions = 1;
    /// When set, each run redraws the train/test split with its own seed.
    std::optional<double> resplit_fraction;

    void validate() const {
        backbone.validate();
        gif.validate();
        if (gif.l2 != backbone.l2) throw ConfigError("gif l2 strength must equal the backbone's");
        if (!(ratio >= 0.0 && ratio <= 1.0)) throw ConfigError("unlearning ratio must lie in [0, 1]");
        for (double r : ratio_grid)
            if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("ratio grid entries must lie in [0, 1]");
        for (double a : attack_grid)
            if (!(a >= 0.0)) throw ConfigError("attack ratio must be >= 0");
        for (double l : lambda_grid)
            if (!(l > 0.0)) throw ConfigError("lambda grid entries must be > 0");
        if (seeds.empty()) throw ConfigError("at least one seed is required");
        if (repetitions < 1) throw ConfigError("repetitions must be >= 1");
        if (methods.empty()) throw ConfigError("at least one method is required");
        if (resplit_fraction && !(*resplit_fraction > 0.0 && *resplit_fraction < 1.0))
            throw ConfigError("split fraction must lie in (0, 1)");
    }
};

/// One (method, seed, parameter) measurement.
struct ReportRow {
    std::string method;
    std::uint64_t seed = 0;
    /// Swept value: lambda, unlearning ratio or attack ratio; 0 when nothing
    /// is swept.
    double param = 0.0;
    double f1 = std::numeric_limits<double>::quiet_NaN();
    double seconds = 0.0;
    /// |theta_hat - theta_0|
    double delta_norm = 0.0;
    /// |theta_hat - theta_retrain|, NaN when no retrain ran.
    double retrain_distance = std::numeric_limits<double>::quiet_NaN();
    double residual = 0.0;
    std::size_t request_size = 0;
    /// ok, divergent, unconverged, unsupported or full-deletion.
    std::string status = "ok";
};

struct Aggregate {
    std::string method;
    double param = 0.0;
    std::size_t count = 0;
    std::size_t failed = 0;
    double f1_mean = std::numeric_limits<double>::quiet_NaN();
    double f1_std = std::numeric_limits<double>::quiet_NaN();
    double seconds_mean = 0.0;
    double seconds_std = 0.0;
    double residual_mean = 0.0;
};

struct Report {
    std::string experiment;
    std::string dataset;
    std::vector<ReportRow> rows;
    std::vector<Aggregate> aggregates;

    /// Recomputes the aggregates, grouping rows by (method, param) in order
    /// of first appearance. Standard deviations are population ones.
    void aggregate();

    const Aggregate* find(std::string_view method, double param = 0.0) const {
        for (const auto& a : aggregates)
            if (a.method == method && a.param == param) return &a;
        return nullptr;
    }
};

inline void Report::aggregate() {
    aggregates.clear();
    std::vector<std::vector<const ReportRow*>> groups;
    for (const auto& r : rows) {
        auto it = std::find_if(aggregates.begin(), aggregates.end(), [&](const Aggregate& a) {
            return a.method == r.method && a.param == r.param;
        });
        if (it == aggregates.end()) {
            aggregates.push_back({r.method, r.param});
            groups.emplace_back();
            it = aggregates.end() - 1;
        }
        groups[static_cast<std::size_t>(it - aggregates.begin())].push_back(&r);
    }
    for (std::size_t i = 0; i < aggregates.size(); ++i) {
        auto& a = aggregates[i];
        std::vector<double> f1s, secs;
        double res = 0.0;
        for (const ReportRow* r : groups[i]) {
            ++a.count;
            if (r->status != "ok") ++a.failed;
            if (std::isfinite(r->f1)) f1s.push_back(r->f1);
            secs.push_back(r->seconds);
            res += r->residual;
        }
        const auto mean_std = [](const std::vector<double>& xs, double& mean, double& sd) {
            if (xs.empty()) return;
            double s = 0.0;
            for (double x : xs) s += x;
            mean = s / static_cast<double>(xs.size());
            double q = 0.0;
            for (double x : xs) q += (x - mean) * (x - mean);
            sd = std::sqrt(q / static_cast<double>(xs.size()));
        };
        mean_std(f1s, a.f1_mean, a.f1_std);
        mean_std(secs, a.seconds_mean, a.seconds_std);
        a.residual_mean = res / static_cast<double>(a.count);
    }
}

/// Worker count from UNLEARN_THREADS, else the number of logical cores.
inline std::size_t worker_count() {
    if (const char* env = std::getenv("UNLEARN_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1)
            throw ConfigError("UNLEARN_THREADS must be a positive integer");
        return static_cast<std::size_t>(v);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

/// Runs fn(0..count-1) on up to worker_count() threads. The first
/// exception thrown by any task is rethrown after all workers finish.
template <class Fn>
void parallel_for(std::size_t count, Fn&& fn) {
    const std::size_t workers = std::min(worker_count(), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (std::size_t i; (i = next.fetch_add(1)) < count;) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (error) std::rethrow_exception(error);
}

/// ceil(ratio * n) with a small tolerance so that e.g. 0.3 * 10 gives 3.
inline std::size_t ratio_count(double ratio, std::size_t n) {
    const double x = ratio * static_cast<double>(n);
    return static_cast<std::size_t>(std::ceil(x - 1e-9 * std::max(1.0, x)));
}

/// Uniform random request deleting ceil(ratio * pool) elements, where the
/// pool is the training nodes (node and feature kinds) or all edges.
inline UnlearnRequest sample_request(const Graph& g, RequestKind kind, double ratio,
                                     std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    if (kind == RequestKind::Edge) {
        std::vector<Edge> pool = g.edges();
        sample_prefix(pool, ratio_count(ratio, pool.size()), rng);
        return UnlearnRequest::remove_edges(std::move(pool));
    }
    std::vector<NodeId> pool = g.train_nodes();
    sample_prefix(pool, ratio_count(ratio, pool.size()), rng);
    return kind == RequestKind::Node ? UnlearnRequest::remove_nodes(std::move(pool))
                                     : UnlearnRequest::revoke_features(std::move(pool));
}

struct RetrainResult {
    RemainingGraph remaining;
    TrainedModel trained;
    double seconds = 0.0;
};

/// Trains from scratch on the graph left after `request`. The timing covers
/// applying the request, propagation and training.
inline RetrainResult retrain(const Graph& graph, const UnlearnRequest& request,
                             const BackboneConfig& config) {
    const auto start = std::chrono::steady_clock::now();
    RemainingGraph rest = apply_request(graph, request);
    if (rest.graph.train_nodes().empty())
        throw InputError("remaining graph has no training nodes");
    TrainedModel trained = train(GraphModel(rest.graph, config));
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return {std::move(rest), std::move(trained), secs};
}

/// ceil(ratio * |E|) new edges joining nodes of different labels, sampled
/// uniformly without replacement from the non-edges; deterministic per seed.
inline std::vector<Edge> adversarial_edges(const Graph& g, double ratio, std::uint64_t seed) {
    if (!(ratio > 0.0)) throw InputError("attack ratio must be > 0");
    const std::size_t n = g.num_nodes();
    std::vector<std::size_t> per_label(static_cast<std::size_t>(g.num_classes()), 0);
    for (int y : g.labels()) ++per_label[static_cast<std::size_t>(y)];
    std::size_t same = 0, present = 0;
    for (std::size_t c : per_label) same += c * (c > 0 ? c - 1 : 0) / 2;
    for (const auto& e : g.edges()) present += g.labels()[e.u] != g.labels()[e.v];
    const std::size_t total = n * (n > 0 ? n - 1 : 0) / 2;
    const std::size_t candidates = total - same - present;
    const std::size_t want = ratio_count(ratio, g.num_edges());
    if (want > candidates)
        throw InputError("only " + std::to_string(candidates) + " cross-label non-edges, " +
                         std::to_string(want) + " requested");

    std::mt19937_64 rng(seed);
    const auto eligible = [&](NodeId a, NodeId b) {
        return a != b && g.labels()[a] != g.labels()[b] && !g.has_edge(a, b);
    };
    std::vector<Edge> out;
    if (want * 2 <= candidates) {
        std::vector<Edge> seen;
        while (out.size() < want) {
            const NodeId a = draw_index(rng, n), b = draw_index(rng, n);
            if (!eligible(a, b)) continue;
            const Edge e = Edge::of(a, b);
            auto it = std::lower_bound(seen.begin(), seen.end(), e);
            if (it != seen.end() && *it == e) continue;
            seen.insert(it, e);
            out.push_back(e);
        }
    } else {
        for (NodeId a = 0; a < n; ++a)
            for (NodeId b = a + 1; b < n; ++b)
                if (eligible(a, b)) out.push_back({a, b});
        sample_prefix(out, want, rng);
    }
    std::sort(out.begin(), out.end());
    return out;
}

namespace detail {

inline std::uint64_t cell_seed(std::uint64_t seed, std::size_t repetition) {
    return seed + 0x9E3779B97F4A7C15ULL * repetition;
}

/// Per-cell stream for request sampling, decorrelated from the split seed.
inline std::uint64_t request_seed(std::uint64_t seed) { return seed ^ 0xD1B54A32D192ED03ULL; }

struct Cell {
    std::uint64_t seed;
    Graph graph;
    BackboneConfig backbone;
};

inline std::vector<std::uint64_t> cell_seeds(const ExperimentSpec& spec) {
    std::vector<std::uint64_t> out;
    for (std::uint64_t s : spec.seeds)
        for (std::size_t r = 0; r < spec.repetitions; ++r) out.push_back(cell_seed(s, r));
    return out;
}

inline Cell make_cell(const ExperimentSpec& spec, const Graph& graph, std::uint64_t seed) {
    Cell c{seed, spec.resplit_fraction ? random_split(graph, *spec.resplit_fraction, seed) : graph,
           spec.backbone};
    c.backbone.seed = seed;
    return c;
}

template <class CellFn>
Report run_cells(const ExperimentSpec& spec, const Graph& graph, std::string experiment,
                 CellFn&& fn) {
    spec.validate();
    const auto seeds = cell_seeds(spec);
    std::vector<std::vector<ReportRow>> out(seeds.size());
    parallel_for(seeds.size(), [&](std::size_t i) {
        out[i] = fn(make_cell(spec, graph, seeds[i]));
    });
    Report report{std::move(experiment), spec.dataset, {}, {}};
    for (auto& rows : out)
        for (auto& r : rows) report.rows.push_back(std::move(r));
    report.aggregate();
    return report;
}

/// Runs every method in `methods` for one request against a trained model
/// and scores each on the remaining graph. Retrain runs first so the others
/// can report their distance to it; rows come out in `methods` order.
/// `retrained`, when given, receives the retrained parameters, or supplies
/// them if it is non-empty and no retrain is listed.
inline std::vector<ReportRow> run_methods(const GraphModel& model, const TrainedModel& trained,
                                          const UnlearnRequest& request,
                                          const std::vector<Method>& methods,
                                          const GifConfig& gif, std::uint64_t seed,
                                          double param, ModelParams* retrained = nullptr) {
    const std::size_t size = request.kind == RequestKind::Edge ? request.edges.size()
                                                               : request.nodes.size();
    const RemainingGraph rest = apply_request(model.graph(), request);
    const GraphModel rest_model(rest.graph, model.config());

    std::optional<ModelParams> reference;
    if (retrained && retrained->size() > 0) reference = *retrained;
    std::vector<ReportRow> rows(methods.size());
    const auto base = [&](Method m) {
        ReportRow r;
        r.method = to_string(m);
        r.seed = seed;
        r.param = param;
        r.request_size = size;
        return r;
    };
    const auto finish = [&](ReportRow& r, const ModelParams& p) {
        r.f1 = test_f1(rest_model, p);
        r.delta_norm = (p.flat() - trained.params.flat()).norm();
    };

    for (std::size_t i = 0; i < methods.size(); ++i) {
        if (methods[i] != Method::Retrain) continue;
        ReportRow r = base(Method::Retrain);
        const RetrainResult rt = retrain(model.graph(), request, model.config());
        r.seconds = rt.seconds;
        finish(r, rt.trained.params);
        r.retrain_distance = 0.0;
        reference = rt.trained.params;
        if (retrained) *retrained = rt.trained.params;
        rows[i] = std::move(r);
    }

    std::optional<Unlearner> unlearner;
    for (std::size_t i = 0; i < methods.size(); ++i) {
        const Method m = methods[i];
        if (m == Method::Retrain) continue;
        ReportRow r = base(m);
        ModelParams result;
        if (m == Method::ClosedForm) {
            if (model.config().kind != BackboneKind::Gcn1 || request.kind != RequestKind::Node) {
                r.status = "unsupported";
                rows[i] = std::move(r);
                continue;
            }
            const auto start = std::chrono::steady_clock::now();
            const auto w = closed_form_one_layer(model, trained.params, request);
            Eigen::VectorXd delta(trained.params.size());
            for (std::size_t j = 0; j < w.size(); ++j)
                delta.segment(static_cast<Eigen::Index>(j) * w[j].size(), w[j].size()) = w[j];
            result = trained.params.with_flat(trained.params.flat() + delta);
            r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        } else {
            if (!unlearner) unlearner.emplace(model, trained);
            GifConfig cfg = gif;
            cfg.method = m == Method::Gif ? UnlearnMethod::Gif : UnlearnMethod::TraditionalIf;
            try {
                const UnlearnOutcome o = unlearner->run(request, cfg);
                r.seconds = o.seconds;
                r.residual = o.solver_residual;
                if (o.full_deletion) r.status = "full-deletion";
                else if (o.solver_residual > cfg.residual_tol) r.status = "unconverged";
                result = o.new_params;
            } catch (const DivergenceError&) {
                r.status = "divergent";
                r.residual = std::numeric_limits<double>::infinity();
                rows[i] = std::move(r);
                continue;
            }
        }
        finish(r, result);
        if (reference) r.retrain_distance = (result.flat() - reference->flat()).norm();
        rows[i] = std::move(r);
    }
    return rows;
}

} // namespace detail

/// Train on the full graph, delete a random share of nodes, edges or
/// feature rows, run each method and score test micro-F1 and time.
inline Report utility_benchmark(const ExperimentSpec& spec, const Graph& graph) {
    return detail::run_cells(spec, graph, "bench", [&](const detail::Cell& c) {
        const GraphModel model(c.graph, c.backbone);
        const TrainedModel trained = train(model);
        const auto request = sample_request(c.graph, spec.task, spec.ratio,
                                            detail::request_seed(c.seed));
        return detail::run_methods(model, trained, request, spec.methods, spec.gif, c.seed, 0.0);
    });
}

/// For each attack ratio: inject cross-label edges, train on the corrupted
/// graph, then unlearn exactly the injected edges with each method. Rows
/// "clean" (trained without the attack) and "corrupted" come first.
inline Report efficacy_experiment(const ExperimentSpec& spec, const Graph& graph) {
    return detail::run_cells(spec, graph, "attack-eval", [&](const detail::Cell& c) {
        std::vector<ReportRow> rows;
        const GraphModel clean_model(c.graph, c.backbone);
        const TrainedModel clean = train(clean_model);
        const double clean_f1 = test_f1(clean_model, clean.params);
        for (double attack : spec.attack_grid) {
            ReportRow cr;
            cr.method = "clean";
            cr.seed = c.seed;
            cr.param = attack;
            cr.f1 = clean_f1;
            rows.push_back(cr);

            std::vector<Edge> adv;
            if (attack > 0.0) adv = adversarial_edges(c.graph, attack, detail::request_seed(c.seed));
            const Graph corrupted = c.graph.with_added_edges(adv);
            const GraphModel model(corrupted, c.backbone);
            const TrainedModel trained = train(model);
            ReportRow kr = cr;
            kr.method = "corrupted";
            kr.f1 = test_f1(model, trained.params);
            kr.request_size = adv.size();
            rows.push_back(kr);

            auto method_rows = detail::run_methods(model, trained, UnlearnRequest::remove_edges(adv),
                                                   spec.methods, spec.gif, c.seed, attack);
            rows.insert(rows.end(), method_rows.begin(), method_rows.end());
        }
        return rows;
    });
}

/// GIF with the Neumann solver at every lambda in the grid, against one
/// retrain reference per run. Divergent solves become failed rows.
inline Report lambda_sweep(const ExperimentSpec& spec, const Graph& graph) {
    if (spec.lambda_grid.empty()) throw ConfigError("lambda grid is empty");
    std::vector<double> grid = spec.lambda_grid;
    std::sort(grid.begin(), grid.end());
    return detail::run_cells(spec, graph, "sweep-lambda", [&](const detail::Cell& c) {
        const GraphModel model(c.graph, c.backbone);
        const TrainedModel trained = train(model);
        const auto request = sample_request(c.graph, spec.task, spec.ratio,
                                            detail::request_seed(c.seed));
        ModelParams reference;
        auto rows = detail::run_methods(model, trained, request, {Method::Retrain}, spec.gif,
                                        c.seed, 0.0, &reference);
        for (double lambda : grid) {
            GifConfig cfg = spec.gif;
            cfg.solver = SolverKind::Neumann;
            cfg.lambda = lambda;
            auto r = detail::run_methods(model, trained, request, {Method::Gif}, cfg, c.seed,
                                         lambda, &reference);
            rows.push_back(std::move(r[0]));
        }
        return rows;
    });
}

/// Methods at every unlearning ratio in the grid; one trained model per run.
inline Report ratio_sweep(const ExperimentSpec& spec, const Graph& graph) {
    return detail::run_cells(spec, graph, "sweep-ratio", [&](const detail::Cell& c) {
        const GraphModel model(c.graph, c.backbone);
        const TrainedModel trained = train(model);
        std::vector<ReportRow> rows;
        for (double ratio : spec.ratio_grid) {
            const auto request = sample_request(c.graph, spec.task, ratio,
                                                detail::request_seed(c.seed));
            auto r = detail::run_methods(model, trained, request, spec.methods, spec.gif, c.seed, ratio);
            rows.insert(rows.end(), r.begin(), r.end());
        }
        return rows;
    });
}

} // namespace gifkit

#endif // GIFKIT_EVAL_HPP
