#ifndef GIFKIT_IO_HPP
#define GIFKIT_IO_HPP

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "backbone.hpp"
#include "errors.hpp"
#include "eval.hpp"
#include "gif.hpp"
#include "graph.hpp"

namespace gifkit {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// Text helpers

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream in(line);
    for (std::string tok; in >> tok;) out.push_back(std::move(tok));
    return out;
}

inline std::vector<std::string> split_on(const std::string& line, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == sep) {
            out.push_back(std::move(cur));
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(std::move(cur));
    for (auto& s : out) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        s = b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    }
    return out;
}

inline std::ifstream open_in(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    return in;
}

inline std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream out(p, std::ios::binary);
    if (!out) throw IoError("cannot write " + p.string());
    return out;
}

inline bool blank(const std::string& line) {
    return line.find_first_not_of(" \t\r") == std::string::npos;
}

/// Uniform double in [0, 1) from the top 53 bits of the engine output.
inline double unit_draw(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

} // namespace detail

// ---------------------------------------------------------------------------
// Citation datasets

/// A citation graph with the string ids and label names it was read with.
struct CitationData {
    Graph graph;
    std::vector<std::string> ids;
    std::vector<std::string> label_names;
    /// Citation lines naming an id absent from the content file.
    std::size_t unknown_citations = 0;
    std::size_t self_citations = 0;
    /// Lines repeating an edge already seen (either direction).
    std::size_t duplicate_citations = 0;
};

/// Reads a `.content` / `.cites` pair. Nodes are numbered in order of first
/// appearance in the content file, labels by sorted label name; features
/// are kept as read (0/1). The split is drawn from `split_fraction` and
/// `split_seed`.
inline CitationData load_citation_dataset(const std::filesystem::path& content_path,
                                          const std::filesystem::path& cites_path,
                                          double split_fraction, std::uint64_t split_seed) {
    CitationData out;
    std::unordered_map<std::string, NodeId> index;
    std::vector<std::vector<std::uint32_t>> on_bits;
    std::vector<std::string> raw_labels;
    std::size_t width = 0;
    bool have_width = false;

    auto content = detail::open_in(content_path);
    std::size_t lineno = 0;
    for (std::string line; std::getline(content, line);) {
        ++lineno;
        if (detail::blank(line)) continue;
        auto tok = detail::split_ws(line);
        if (tok.size() < 2) throw ParseError("content line needs an id and a label", lineno);
        const std::size_t f = tok.size() - 2;
        if (!have_width) {
            width = f;
            have_width = true;
        } else if (f != width) {
            throw ParseError("expected " + std::to_string(width) + " features, found " +
                                 std::to_string(f),
                             lineno);
        }
        if (!index.emplace(tok[0], out.ids.size()).second)
            throw ParseError("duplicate node id '" + tok[0] + "'", lineno);
        std::vector<std::uint32_t> bits;
        for (std::size_t j = 0; j < f; ++j) {
            const auto& t = tok[j + 1];
            if (t == "1") bits.push_back(static_cast<std::uint32_t>(j));
            else if (t != "0")
                throw ParseError("feature token '" + t + "' is not 0 or 1", lineno);
        }
        out.ids.push_back(tok[0]);
        on_bits.push_back(std::move(bits));
        raw_labels.push_back(tok.back());
    }
    if (out.ids.empty()) throw ParseError("content file has no nodes", lineno);

    out.label_names = raw_labels;
    std::sort(out.label_names.begin(), out.label_names.end());
    out.label_names.erase(std::unique(out.label_names.begin(), out.label_names.end()),
                          out.label_names.end());
    std::vector<int> labels;
    for (const auto& l : raw_labels)
        labels.push_back(static_cast<int>(
            std::lower_bound(out.label_names.begin(), out.label_names.end(), l) -
            out.label_names.begin()));

    const std::size_t n = out.ids.size();
    RowMatrix x = RowMatrix::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(width));
    for (std::size_t i = 0; i < n; ++i)
        for (auto j : on_bits[i]) x(static_cast<Eigen::Index>(i), j) = 1.0;

    std::vector<Edge> edges;
    auto cites = detail::open_in(cites_path);
    lineno = 0;
    for (std::string line; std::getline(cites, line);) {
        ++lineno;
        if (detail::blank(line)) continue;
        auto tok = detail::split_ws(line);
        if (tok.size() != 2) throw ParseError("citation line needs exactly two ids", lineno);
        auto a = index.find(tok[0]), b = index.find(tok[1]);
        if (a == index.end() || b == index.end()) {
            ++out.unknown_citations;
            continue;
        }
        if (a->second == b->second) {
            ++out.self_citations;
            continue;
        }
        edges.push_back(Edge::of(a->second, b->second));
    }
    std::sort(edges.begin(), edges.end());
    const auto last = std::unique(edges.begin(), edges.end());
    out.duplicate_citations = static_cast<std::size_t>(edges.end() - last);
    edges.erase(last, edges.end());

    Graph g = Graph::build(n, std::move(edges), std::move(x), std::move(labels),
                           static_cast<int>(out.label_names.size()),
                           std::vector<std::uint8_t>(n, 0), std::vector<std::uint8_t>(n, 0));
    out.graph = random_split(g, split_fraction, split_seed);
    return out;
}

/// Writes `data` back in the format load_citation_dataset reads. Features
/// must be 0/1.
inline void save_citation_dataset(const CitationData& data,
                                  const std::filesystem::path& content_path,
                                  const std::filesystem::path& cites_path) {
    const Graph& g = data.graph;
    if (data.ids.size() != g.num_nodes()) throw InputError("id list length differs from node count");
    auto content = detail::open_out(content_path);
    for (NodeId v = 0; v < g.num_nodes(); ++v) {
        content << data.ids[v];
        for (Eigen::Index j = 0; j < g.features().cols(); ++j) {
            const double f = g.features()(static_cast<Eigen::Index>(v), j);
            if (f != 0.0 && f != 1.0)
                throw InputError("feature (" + std::to_string(v) + ", " + std::to_string(j) +
                                 ") is not 0 or 1");
            content << (f == 1.0 ? " 1" : " 0");
        }
        content << ' ' << data.label_names[static_cast<std::size_t>(g.labels()[v])] << '\n';
    }
    auto cites = detail::open_out(cites_path);
    for (const auto& e : g.edges()) cites << data.ids[e.u] << ' ' << data.ids[e.v] << '\n';
    if (!content || !cites) throw IoError("write failed");
}

// ---------------------------------------------------------------------------
// Synthetic graphs

struct SbmSpec {
    std::size_t blocks = 3;
    std::size_t nodes_per_block = 100;
    double p_intra = 0.1;
    double p_inter = 0.01;
    std::size_t feature_dim = 30;
    std::uint64_t seed = 0;
    /// Height of the one-hot block signal in the features.
    double signal = 1.0;

    void validate() const {
        if (blocks < 2) throw InputError("an SBM needs at least two blocks");
        if (nodes_per_block < 1) throw InputError("blocks must be non-empty");
        if (!(p_inter >= 0.0 && p_inter <= p_intra && p_intra <= 1.0))
            throw InputError("SBM probabilities must satisfy 0 <= p_inter <= p_intra <= 1");
        if (feature_dim < blocks) throw InputError("feature width must be at least the block count");
        if (!std::isfinite(signal)) throw InputError("signal must be finite");
    }
};

/// Stochastic block model: block index is the label, every unordered pair
/// is an edge with probability p_intra (same block) or p_inter. Node i of
/// block b carries `signal` in columns [b w, (b+1) w), w = feature_dim /
/// blocks, plus uniform noise in [-0.1, 0.1] everywhere.
inline Graph gen_sbm(const SbmSpec& spec, double split_fraction = 0.9,
                     std::optional<std::uint64_t> split_seed = std::nullopt) {
    spec.validate();
    const std::size_t n = spec.blocks * spec.nodes_per_block;
    std::mt19937_64 rng(spec.seed);
    std::vector<int> labels(n);
    for (NodeId v = 0; v < n; ++v) labels[v] = static_cast<int>(v / spec.nodes_per_block);

    std::vector<Edge> edges;
    for (NodeId a = 0; a < n; ++a)
        for (NodeId b = a + 1; b < n; ++b) {
            const double p = labels[a] == labels[b] ? spec.p_intra : spec.p_inter;
            if (detail::unit_draw(rng) < p) edges.push_back({a, b});
        }

    const std::size_t w = spec.feature_dim / spec.blocks;
    RowMatrix x(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(spec.feature_dim));
    for (Eigen::Index i = 0; i < x.rows(); ++i)
        for (Eigen::Index j = 0; j < x.cols(); ++j) x(i, j) = 0.2 * detail::unit_draw(rng) - 0.1;
    for (NodeId v = 0; v < n; ++v)
        for (std::size_t j = 0; j < w; ++j)
            x(static_cast<Eigen::Index>(v),
              static_cast<Eigen::Index>(static_cast<std::size_t>(labels[v]) * w + j)) += spec.signal;

    Graph g = Graph::build(n, std::move(edges), std::move(x), std::move(labels),
                           static_cast<int>(spec.blocks), std::vector<std::uint8_t>(n, 0),
                           std::vector<std::uint8_t>(n, 0));
    return random_split(g, split_fraction, split_seed.value_or(spec.seed));
}

// ---------------------------------------------------------------------------
// Dataset descriptors

struct DatasetDescriptor {
    std::string name = "sbm";
    std::filesystem::path content_path;
    std::filesystem::path cites_path;
    std::optional<SbmSpec> sbm;
    double split_fraction = 0.9;
    std::uint64_t split_seed = 0;
    /// Scale each feature row to unit L2 norm before training.
    bool normalize_features = true;

    void validate() const {
        const bool files = !content_path.empty() || !cites_path.empty();
        if (files == sbm.has_value())
            throw ConfigError("dataset needs exactly one of a content/cites pair or an sbm spec");
        if (files && (content_path.empty() || cites_path.empty()))
            throw ConfigError("dataset needs both a content and a cites path");
        if (!(split_fraction > 0.0 && split_fraction < 1.0))
            throw ConfigError("split fraction must lie in (0, 1)");
        if (sbm) sbm->validate();
    }
};

struct LoadedDataset {
    Graph graph;
    /// String ids per node; empty for generated graphs.
    std::vector<std::string> ids;
    std::vector<std::string> warnings;
};

inline LoadedDataset load_dataset(const DatasetDescriptor& d) {
    d.validate();
    LoadedDataset out;
    if (d.sbm) {
        out.graph = gen_sbm(*d.sbm, d.split_fraction, d.split_seed);
    } else {
        CitationData c = load_citation_dataset(d.content_path, d.cites_path, d.split_fraction,
                                               d.split_seed);
        if (c.unknown_citations)
            out.warnings.push_back(std::to_string(c.unknown_citations) +
                                   " citation lines reference unknown ids and were dropped");
        out.graph = std::move(c.graph);
        out.ids = std::move(c.ids);
    }
    if (d.normalize_features) out.graph = normalize_feature_rows(out.graph);
    return out;
}

// ---------------------------------------------------------------------------
// Request files

/// Reads a request file: a header line `node`, `edge` or `feature`, then one
/// node id or one `u v` pair per line. Blank lines are skipped. Ids are
/// numeric node indices, or string ids when `ids` is given.
inline UnlearnRequest read_request(const std::filesystem::path& path,
                                   const std::vector<std::string>& ids = {}) {
    std::unordered_map<std::string, NodeId> index;
    for (std::size_t i = 0; i < ids.size(); ++i) index.emplace(ids[i], i);
    const auto node = [&](const std::string& tok, std::size_t lineno) -> NodeId {
        if (!ids.empty()) {
            auto it = index.find(tok);
            if (it == index.end()) throw ParseError("unknown node id '" + tok + "'", lineno);
            return it->second;
        }
        std::size_t pos = 0;
        unsigned long long v = 0;
        try {
            v = std::stoull(tok, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos != tok.size() || tok.empty() || tok[0] == '-')
            throw ParseError("'" + tok + "' is not a node index", lineno);
        return static_cast<NodeId>(v);
    };

    auto in = detail::open_in(path);
    std::optional<RequestKind> kind;
    std::vector<NodeId> nodes;
    std::vector<Edge> edges;
    std::size_t lineno = 0;
    for (std::string line; std::getline(in, line);) {
        ++lineno;
        if (detail::blank(line)) continue;
        auto tok = detail::split_ws(line);
        if (!kind) {
            if (tok.size() != 1) throw ParseError("header must be node, edge or feature", lineno);
            if (tok[0] == "node") kind = RequestKind::Node;
            else if (tok[0] == "edge") kind = RequestKind::Edge;
            else if (tok[0] == "feature") kind = RequestKind::Feature;
            else throw ParseError("unknown request kind '" + tok[0] + "'", lineno);
            continue;
        }
        if (*kind == RequestKind::Edge) {
            if (tok.size() != 2) throw ParseError("edge line needs two node ids", lineno);
            edges.push_back(Edge::of(node(tok[0], lineno), node(tok[1], lineno)));
        } else {
            if (tok.size() != 1) throw ParseError("expected one node id", lineno);
            nodes.push_back(node(tok[0], lineno));
        }
    }
    if (!kind) throw ParseError("request file has no header", lineno);
    switch (*kind) {
    case RequestKind::Node: return UnlearnRequest::remove_nodes(std::move(nodes));
    case RequestKind::Edge: return UnlearnRequest::remove_edges(std::move(edges));
    case RequestKind::Feature: return UnlearnRequest::revoke_features(std::move(nodes));
    }
    return {};
}

inline void write_request(const std::filesystem::path& path, const UnlearnRequest& r) {
    auto out = detail::open_out(path);
    out << to_string(r.kind) << '\n';
    for (NodeId v : r.nodes) out << v << '\n';
    for (const auto& e : r.edges) out << e.u << ' ' << e.v << '\n';
    if (!out) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// Configuration

/// Everything one CLI invocation needs.
struct RunConfig {
    DatasetDescriptor dataset;
    BackboneConfig backbone;
    GifConfig gif;
    ExperimentSpec experiment;
    std::filesystem::path request_path;
    std::filesystem::path out = "out";
};

namespace detail {

inline BackboneKind parse_backbone(const std::string& s) {
    if (s == "sgc") return BackboneKind::Sgc;
    if (s == "gcn1") return BackboneKind::Gcn1;
    if (s == "gcn2") return BackboneKind::Gcn2;
    throw ConfigError("unknown backbone '" + s + "' (sgc, gcn1, gcn2)");
}

inline RequestKind parse_task(const std::string& s) {
    if (s == "node") return RequestKind::Node;
    if (s == "edge") return RequestKind::Edge;
    if (s == "feature") return RequestKind::Feature;
    throw ConfigError("unknown task '" + s + "' (node, edge, feature)");
}

inline Method parse_method(const std::string& s) {
    if (s == "retrain") return Method::Retrain;
    if (s == "gif") return Method::Gif;
    if (s == "if") return Method::TraditionalIf;
    if (s == "closed-form") return Method::ClosedForm;
    throw ConfigError("unknown method '" + s + "' (gif, if, retrain, closed-form)");
}

inline SolverKind parse_solver(const std::string& s) {
    if (s == "neumann") return SolverKind::Neumann;
    if (s == "direct") return SolverKind::Direct;
    throw ConfigError("unknown solver '" + s + "' (neumann, direct)");
}

inline HessianForm parse_hessian(const std::string& s) {
    if (s == "exact") return HessianForm::Exact;
    if (s == "block-diagonal") return HessianForm::BlockDiagonal;
    throw ConfigError("unknown hessian form '" + s + "' (exact, block-diagonal)");
}

inline RegionPolicy parse_region(const std::string& s) {
    if (s == "receptive-field") return RegionPolicy::ReceptiveField;
    if (s == "k-hop") return RegionPolicy::KHop;
    throw ConfigError("unknown region policy '" + s + "' (receptive-field, k-hop)");
}

inline const char* to_string(HessianForm f) {
    return f == HessianForm::Exact ? "exact" : "block-diagonal";
}
inline const char* to_string(RegionPolicy p) {
    return p == RegionPolicy::ReceptiveField ? "receptive-field" : "k-hop";
}

/// Reads a JSON object field by field and rejects keys nobody asked for.
class Fields {
public:
    Fields(const Json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j.is_object()) throw ConfigError(where_ + " must be an object");
    }

    template <class T>
    void get(const char* key, T& out) {
        seen_.push_back(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const Json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }

    const Json* sub(const char* key) {
        seen_.push_back(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }

    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (std::find(seen_.begin(), seen_.end(), it.key()) == seen_.end())
                throw ConfigError("unknown key " + where_ + "." + it.key());
    }

private:
    const Json& j_;
    std::string where_;
    std::vector<std::string> seen_;
};

} // namespace detail

/// Builds a RunConfig from a JSON document; see the README for the schema.
/// The l2 strength is set once, under backbone, and shared with the
/// unlearning config.
inline RunConfig parse_config(const Json& root) {
    RunConfig cfg;
    detail::Fields top(root, "config");
    if (const Json* d = top.sub("dataset")) {
        detail::Fields f(*d, "dataset");
        std::string content, cites;
        f.get("name", cfg.dataset.name);
        f.get("content", content);
        f.get("cites", cites);
        cfg.dataset.content_path = content;
        cfg.dataset.cites_path = cites;
        f.get("split_fraction", cfg.dataset.split_fraction);
        f.get("split_seed", cfg.dataset.split_seed);
        f.get("normalize_features", cfg.dataset.normalize_features);
        if (const Json* s = f.sub("sbm")) {
            SbmSpec spec;
            detail::Fields g(*s, "dataset.sbm");
            g.get("blocks", spec.blocks);
            g.get("nodes_per_block", spec.nodes_per_block);
            g.get("p_intra", spec.p_intra);
            g.get("p_inter", spec.p_inter);
            g.get("feature_dim", spec.feature_dim);
            g.get("seed", spec.seed);
            g.get("signal", spec.signal);
            g.finish();
            cfg.dataset.sbm = spec;
        }
        f.finish();
    }
    if (!cfg.dataset.sbm && cfg.dataset.content_path.empty()) cfg.dataset.sbm = SbmSpec{};

    if (const Json* b = top.sub("backbone")) {
        detail::Fields f(*b, "backbone");
        std::string kind = "sgc";
        f.get("kind", kind);
        cfg.backbone = BackboneConfig::for_kind(detail::parse_backbone(kind));
        f.get("depth", cfg.backbone.depth);
        f.get("hidden_dim", cfg.backbone.hidden_dim);
        f.get("self_loops", cfg.backbone.self_loops);
        f.get("l2", cfg.backbone.l2);
        f.get("epochs", cfg.backbone.epochs);
        f.get("learning_rate", cfg.backbone.learning_rate);
        f.get("seed", cfg.backbone.seed);
        f.finish();
    }
    cfg.gif.l2 = cfg.backbone.l2;
    if (const Json* g = top.sub("gif")) {
        detail::Fields f(*g, "gif");
        std::string method = "gif", solver = "neumann", form = "exact", region = "receptive-field";
        f.get("method", method);
        f.get("solver", solver);
        f.get("hessian_form", form);
        f.get("region_policy", region);
        const Method m = detail::parse_method(method);
        if (m != Method::Gif && m != Method::TraditionalIf)
            throw ConfigError("gif.method must be gif or if");
        cfg.gif.method = m == Method::Gif ? UnlearnMethod::Gif : UnlearnMethod::TraditionalIf;
        cfg.gif.solver = detail::parse_solver(solver);
        cfg.gif.hessian_form = detail::parse_hessian(form);
        cfg.gif.region_policy = detail::parse_region(region);
        f.get("lambda", cfg.gif.lambda);
        f.get("iterations", cfg.gif.iterations);
        f.get("residual_tol", cfg.gif.residual_tol);
        f.get("lambda_multiplies", cfg.gif.lambda_multiplies);
        f.get("subtract_base_gradient", cfg.gif.subtract_base_gradient);
        f.finish();
    }
    if (const Json* e = top.sub("experiment")) {
        detail::Fields f(*e, "experiment");
        std::string task = "edge";
        std::vector<std::string> methods;
        f.get("task", task);
        cfg.experiment.task = detail::parse_task(task);
        f.get("methods", methods);
        if (!methods.empty()) {
            cfg.experiment.methods.clear();
            for (const auto& m : methods) cfg.experiment.methods.push_back(detail::parse_method(m));
        }
        f.get("ratio", cfg.experiment.ratio);
        f.get("attack_grid", cfg.experiment.attack_grid);
        f.get("lambda_grid", cfg.experiment.lambda_grid);
        f.get("ratio_grid", cfg.experiment.ratio_grid);
        f.get("seeds", cfg.experiment.seeds);
        f.get("repetitions", cfg.experiment.repetitions);
        bool resplit = false;
        f.get("resplit", resplit);
        if (resplit) cfg.experiment.resplit_fraction = cfg.dataset.split_fraction;
        f.finish();
    }
    std::string request, out;
    top.get("request", request);
    top.get("out", out);
    cfg.request_path = request;
    if (!out.empty()) cfg.out = out;
    top.finish();
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    auto in = detail::open_in(path);
    Json j;
    try {
        j = Json::parse(in);
    } catch (const Json::parse_error& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
    return parse_config(j);
}

/// Copies the backbone and unlearning settings into the experiment spec and
/// checks every part.
inline void finalize_config(RunConfig& cfg) {
    if (cfg.experiment.resplit_fraction) cfg.experiment.resplit_fraction = cfg.dataset.split_fraction;
    cfg.experiment.dataset = cfg.dataset.name;
    cfg.experiment.backbone = cfg.backbone;
    cfg.experiment.gif = cfg.gif;
    cfg.dataset.validate();
    cfg.experiment.validate();
}

/// The resolved configuration as JSON; the inverse of parse_config.
inline Json config_to_json(const RunConfig& cfg) {
    Json d{{"name", cfg.dataset.name},
           {"split_fraction", cfg.dataset.split_fraction},
           {"split_seed", cfg.dataset.split_seed},
           {"normalize_features", cfg.dataset.normalize_features}};
    if (cfg.dataset.sbm) {
        const auto& s = *cfg.dataset.sbm;
        d["sbm"] = {{"blocks", s.blocks},         {"nodes_per_block", s.nodes_per_block},
                    {"p_intra", s.p_intra},       {"p_inter", s.p_inter},
                    {"feature_dim", s.feature_dim}, {"seed", s.seed},
                    {"signal", s.signal}};
    } else {
        d["content"] = cfg.dataset.content_path.string();
        d["cites"] = cfg.dataset.cites_path.string();
    }
    const auto& b = cfg.backbone;
    Json methods = Json::array();
    for (Method m : cfg.experiment.methods) methods.push_back(to_string(m));
    const auto& g = cfg.gif;
    return Json{
        {"dataset", d},
        {"backbone",
         {{"kind", to_string(b.kind)}, {"depth", b.depth}, {"hidden_dim", b.hidden_dim},
          {"self_loops", b.self_loops}, {"l2", b.l2}, {"epochs", b.epochs},
          {"learning_rate", b.learning_rate}, {"seed", b.seed}}},
        {"gif",
         {{"method", to_string(g.method)}, {"solver", to_string(g.solver)},
          {"hessian_form", detail::to_string(g.hessian_form)},
          {"region_policy", detail::to_string(g.region_policy)}, {"lambda", g.lambda},
          {"iterations", g.iterations}, {"residual_tol", g.residual_tol},
          {"lambda_multiplies", g.lambda_multiplies},
          {"subtract_base_gradient", g.subtract_base_gradient}}},
        {"experiment",
         {{"task", to_string(cfg.experiment.task)}, {"methods", methods},
          {"ratio", cfg.experiment.ratio}, {"attack_grid", cfg.experiment.attack_grid},
          {"lambda_grid", cfg.experiment.lambda_grid}, {"ratio_grid", cfg.experiment.ratio_grid},
          {"seeds", cfg.experiment.seeds}, {"repetitions", cfg.experiment.repetitions},
          {"resplit", cfg.experiment.resplit_fraction.has_value()}}},
        {"request", cfg.request_path.string()},
        {"out", cfg.out.string()}};
}

// ---------------------------------------------------------------------------
// Canonical serialization

/// Shortest decimal text with 17 significant digits; NaN and infinities
/// become null.
inline std::string format_number(double x) {
    if (!std::isfinite(x)) return "null";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

namespace detail {

inline void write_canonical(const Json& j, std::string& out) {
    switch (j.type()) {
    case Json::value_t::object: {
        out += '{';
        std::vector<std::string> keys;
        for (auto it = j.begin(); it != j.end(); ++it) keys.push_back(it.key());
        std::sort(keys.begin(), keys.end());
        for (std::size_t i = 0; i < keys.size(); ++i) {
            if (i) out += ',';
            out += Json(keys[i]).dump();
            out += ':';
            write_canonical(j.at(keys[i]), out);
        }
        out += '}';
        break;
    }
    case Json::value_t::array:
        out += '[';
        for (std::size_t i = 0; i < j.size(); ++i) {
            if (i) out += ',';
            write_canonical(j[i], out);
        }
        out += ']';
        break;
    case Json::value_t::number_float:
        out += format_number(j.get<double>());
        break;
    default:
        out += j.dump();
        break;
    }
}

} // namespace detail

/// JSON text with sorted keys, no whitespace, 17-digit numbers and a
/// trailing newline.
inline std::string canonical_json(const Json& j) {
    std::string out;
    detail::write_canonical(j, out);
    out += '\n';
    return out;
}

/// 64-bit FNV-1a.
inline std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

/// Hash of the resolved configuration, leaving out the output directory so
/// that the same run written to two places carries the same hash.
inline std::string config_hash(const RunConfig& cfg) {
    Json j = config_to_json(cfg);
    j.erase("out");
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx",
                  static_cast<unsigned long long>(fnv1a(canonical_json(j))));
    return buf;
}

/// Report contents minus wall-clock times, which go to timing.csv so that
/// reruns produce identical report files.
inline Json report_to_json(const Report& r, const std::string& hash) {
    Json rows = Json::array(), aggs = Json::array();
    for (const auto& x : r.rows)
        rows.push_back({{"method", x.method},
                        {"seed", x.seed},
                        {"param", x.param},
                        {"f1", x.f1},
                        {"delta_norm", x.delta_norm},
                        {"retrain_distance", x.retrain_distance},
                        {"residual", x.residual},
                        {"request_size", x.request_size},
                        {"status", x.status}});
    for (const auto& a : r.aggregates)
        aggs.push_back({{"method", a.method},
                        {"param", a.param},
                        {"count", a.count},
                        {"failed", a.failed},
                        {"f1_mean", a.f1_mean},
                        {"f1_std", a.f1_std},
                        {"residual_mean", a.residual_mean}});
    return Json{{"experiment", r.experiment},
                {"dataset", r.dataset},
                {"config_hash", hash},
                {"rows", rows},
                {"aggregates", aggs}};
}

/// Writes report.json, report.csv, timing.csv and config.json into `dir`.
inline void write_report(const std::filesystem::path& dir, const Report& r, const RunConfig& cfg) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
    const std::string hash = config_hash(cfg);

    detail::open_out(dir / "report.json") << canonical_json(report_to_json(r, hash));
    detail::open_out(dir / "config.json") << canonical_json(config_to_json(cfg));

    auto csv = detail::open_out(dir / "report.csv");
    csv << "config_hash,experiment,dataset,method,seed,param,f1,delta_norm,retrain_distance,"
           "residual,request_size,status\n";
    for (const auto& x : r.rows)
        csv << hash << ',' << r.experiment << ',' << r.dataset << ',' << x.method << ',' << x.seed
            << ',' << format_number(x.param) << ',' << format_number(x.f1) << ','
            << format_number(x.delta_norm) << ',' << format_number(x.retrain_distance) << ','
            << format_number(x.residual) << ',' << x.request_size << ',' << x.status << '\n';

    auto timing = detail::open_out(dir / "timing.csv");
    timing << "method,seed,param,seconds\n";
    for (const auto& x : r.rows)
        timing << x.method << ',' << x.seed << ',' << format_number(x.param) << ','
               << format_number(x.seconds) << '\n';
    if (!csv || !timing) throw IoError("write failed in " + dir.string());
}

// ---------------------------------------------------------------------------
// Conversion

/// Builds a `.content` / `.cites` pair from an edge list (`a b` or `a,b` per
/// line) and a feature CSV (`id,label,f1,...,fF` per line, 0/1 features;
/// lines starting with '#' are skipped). Returns the number of edge lines
/// dropped because an endpoint has no feature row.
inline std::size_t convert_edge_list(const std::filesystem::path& edges_path,
                                     const std::filesystem::path& features_path,
                                     const std::filesystem::path& out_prefix) {
    auto feats = detail::open_in(features_path);
    auto content = detail::open_out(out_prefix.string() + ".content");
    std::unordered_map<std::string, bool> known;
    std::size_t width = 0, lineno = 0;
    bool have_width = false;
    for (std::string line; std::getline(feats, line);) {
        ++lineno;
        if (detail::blank(line) || line[0] == '#') continue;
        auto tok = detail::split_on(line, ',');
        if (tok.size() < 2) throw ParseError("feature line needs an id and a label", lineno);
        const std::size_t f = tok.size() - 2;
        if (!have_width) {
            width = f;
            have_width = true;
        } else if (f != width) {
            throw ParseError("expected " + std::to_string(width) + " features", lineno);
        }
        if (tok[0].empty() || !known.emplace(tok[0], true).second)
            throw ParseError("empty or duplicate node id", lineno);
        content << tok[0];
        for (std::size_t j = 2; j < tok.size(); ++j) {
            if (tok[j] != "0" && tok[j] != "1")
                throw ParseError("feature token '" + tok[j] + "' is not 0 or 1", lineno);
            content << ' ' << tok[j];
        }
        content << ' ' << tok[1] << '\n';
    }
    auto edges = detail::open_in(edges_path);
    auto cites = detail::open_out(out_prefix.string() + ".cites");
    std::size_t dropped = 0;
    lineno = 0;
    for (std::string line; std::getline(edges, line);) {
        ++lineno;
        if (detail::blank(line) || line[0] == '#') continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        auto tok = detail::split_ws(line);
        if (tok.size() != 2) throw ParseError("edge line needs two ids", lineno);
        if (!known.count(tok[0]) || !known.count(tok[1])) {
            ++dropped;
            continue;
        }
        cites << tok[0] << ' ' << tok[1] << '\n';
    }
    if (!content || !cites) throw IoError("write failed for " + out_prefix.string());
    return dropped;
}

} // namespace gifkit

#endif // GIFKIT_IO_HPP
