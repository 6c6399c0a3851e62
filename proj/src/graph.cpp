#include "graphfield/graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <queue>
#include <sstream>
#include <stdexcept>

namespace graphfield {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

}  // namespace

MetricGraph::MetricGraph(std::vector<Vertex> vertices, std::vector<Edge> edges)
    : vertices_(std::move(vertices)), edges_(std::move(edges)) {
    for (const auto& e : edges_) {
        if (e.from < 0 || e.to < 0 || static_cast<std::size_t>(e.from) >= vertices_.size() ||
            static_cast<std::size_t>(e.to) >= vertices_.size()) {
            throw std::invalid_argument("edge " + std::to_string(e.id) +
                                        ": endpoint vertex index out of range");
        }
    }
    compute_vertex_distances();
}

void MetricGraph::compute_vertex_distances() {
    const auto n = static_cast<int>(vertices_.size());
    std::vector<std::vector<std::pair<int, double>>> adj(static_cast<std::size_t>(n));
    for (const auto& e : edges_) {
        if (!(e.length > 0.0) || !std::isfinite(e.length)) continue;
        if (e.from == e.to) continue;  // loops never shorten vertex paths
        adj[static_cast<std::size_t>(e.from)].emplace_back(e.to, e.length);
        adj[static_cast<std::size_t>(e.to)].emplace_back(e.from, e.length);
    }
    vertex_dist_ = Eigen::MatrixXd::Constant(n, n, kInf);
    using Item = std::pair<double, int>;
    for (int src = 0; src < n; ++src) {
        std::priority_queue<Item, std::vector<Item>, std::greater<>> heap;
        vertex_dist_(src, src) = 0.0;
        heap.emplace(0.0, src);
        while (!heap.empty()) {
            auto [d, v] = heap.top();
            heap.pop();
            if (d > vertex_dist_(src, v)) continue;
            for (auto [w, len] : adj[static_cast<std::size_t>(v)]) {
                if (d + len < vertex_dist_(src, w)) {
                    vertex_dist_(src, w) = d + len;
                    heap.emplace(d + len, w);
                }
            }
        }
    }
}

int MetricGraph::degree(int v) const {
    int d = 0;
    for (const auto& e : edges_) {
        if (e.from == v) ++d;
        if (e.to == v) ++d;
    }
    return d;
}

double MetricGraph::total_length() const {
    double s = 0.0;
    for (const auto& e : edges_) s += e.length;
    return s;
}

int MetricGraph::vertex_index(int id) const {
    for (std::size_t i = 0; i < vertices_.size(); ++i)
        if (vertices_[i].id == id) return static_cast<int>(i);
    throw std::invalid_argument("unknown vertex id " + std::to_string(id));
}

int MetricGraph::edge_index(int id) const {
    for (std::size_t i = 0; i < edges_.size(); ++i)
        if (edges_[i].id == id) return static_cast<int>(i);
    throw std::invalid_argument("unknown edge id " + std::to_string(id));
}

bool MetricGraph::has_coordinates() const {
    return std::all_of(vertices_.begin(), vertices_.end(),
                       [](const Vertex& v) { return v.x.has_value() && v.y.has_value(); });
}

std::array<double, 2> MetricGraph::coordinates(const GraphPoint& p) const {
    const Edge& e = edge(p.edge);
    const double frac = std::clamp(p.t / e.length, 0.0, 1.0);
    if (e.geometry.size() >= 2) {
        std::vector<double> cum(e.geometry.size(), 0.0);
        for (std::size_t i = 1; i < e.geometry.size(); ++i) {
            cum[i] = cum[i - 1] + std::hypot(e.geometry[i][0] - e.geometry[i - 1][0],
                                             e.geometry[i][1] - e.geometry[i - 1][1]);
        }
        const double target = frac * cum.back();
        for (std::size_t i = 1; i < cum.size(); ++i) {
            if (target <= cum[i] || i + 1 == cum.size()) {
                const double seg = cum[i] - cum[i - 1];
                const double w = seg > 0.0 ? (target - cum[i - 1]) / seg : 0.0;
                return {e.geometry[i - 1][0] + w * (e.geometry[i][0] - e.geometry[i - 1][0]),
                        e.geometry[i - 1][1] + w * (e.geometry[i][1] - e.geometry[i - 1][1])};
            }
        }
    }
    const Vertex& a = vertices_[static_cast<std::size_t>(e.from)];
    const Vertex& b = vertices_[static_cast<std::size_t>(e.to)];
    const double ax = a.x.value_or(0.0), ay = a.y.value_or(0.0);
    const double bx = b.x.value_or(0.0), by = b.y.value_or(0.0);
    return {ax + frac * (bx - ax), ay + frac * (by - ay)};
}

void MetricGraph::check_point(const GraphPoint& p) const {
    if (p.edge < 0 || static_cast<std::size_t>(p.edge) >= edges_.size()) {
        throw std::out_of_range("point references edge index " + std::to_string(p.edge) +
                                " which is not on the graph");
    }
    const double len = edges_[static_cast<std::size_t>(p.edge)].length;
    if (!(p.t >= 0.0 && p.t <= len)) {
        std::ostringstream msg;
        msg << "point t = " << p.t << " outside [0, " << len << "] on edge index " << p.edge;
        throw std::out_of_range(msg.str());
    }
}

GraphDiagnostics validate(const MetricGraph& graph) {
    GraphDiagnostics diag;
    if (graph.num_vertices() == 0) diag.errors.emplace_back("graph has no vertices");
    if (graph.num_edges() == 0) diag.errors.emplace_back("graph has no edges");
    for (const auto& e : graph.edges()) {
        if (!std::isfinite(e.length)) {
            diag.errors.push_back("edge " + std::to_string(e.id) + ": non-finite length");
        } else if (!(e.length > 0.0)) {
            diag.errors.push_back("edge " + std::to_string(e.id) + ": nonpositive length");
        }
        diag.total_length += e.length;
    }
    for (std::size_t v = 0; v < graph.num_vertices(); ++v)
        diag.degrees.push_back(graph.degree(static_cast<int>(v)));

    const auto& dist = graph.vertex_distances();
    diag.connected = graph.num_vertices() > 0 && dist.allFinite();
    if (graph.num_vertices() > 0 && !diag.connected) diag.errors.emplace_back("graph is disconnected");
    diag.ok = diag.errors.empty();
    return diag;
}

void require_valid(const MetricGraph& graph) {
    const auto diag = validate(graph);
    if (!diag.ok) {
        std::string msg = "invalid graph:";
        for (const auto& e : diag.errors) msg += " " + e + ";";
        throw std::invalid_argument(msg);
    }
}

Eigen::VectorXd distances_to_vertices(const MetricGraph& graph, const GraphPoint& a) {
    graph.check_point(a);
    const Edge& e = graph.edge(a.edge);
    const auto& D = graph.vertex_distances();
    const double to_from = std::min(a.t, e.length - a.t + D(e.to, e.from));
    const double to_to = std::min(e.length - a.t, a.t + D(e.from, e.to));
    Eigen::VectorXd out(static_cast<Eigen::Index>(graph.num_vertices()));
    for (Eigen::Index v = 0; v < out.size(); ++v)
        out(v) = std::min(to_from + D(e.from, v), to_to + D(e.to, v));
    return out;
}

double geodesic(const MetricGraph& graph, const GraphPoint& a, const GraphPoint& b) {
    graph.check_point(b);
    const Eigen::VectorXd da = distances_to_vertices(graph, a);
    const Edge& eb = graph.edge(b.edge);
    double best = std::min(da(eb.from) + b.t, da(eb.to) + (eb.length - b.t));
    if (a.edge == b.edge) best = std::min(best, std::abs(a.t - b.t));
    return best;
}

EdgeFunction constant_function(double value) {
    return [value](const GraphPoint&) { return value; };
}

MetricGraph make_interval(double length) {
    return MetricGraph({{0, 0.0, 0.0}, {1, length, 0.0}}, {{0, 0, 1, length, {}}});
}

MetricGraph make_circle(double length) {
    const double r = length / (2.0 * std::numbers::pi);
    Edge e{0, 0, 0, length, {}};
    for (int k = 0; k <= 32; ++k) {
        const double a = 2.0 * std::numbers::pi * k / 32.0;
        e.geometry.push_back({r * std::cos(a), r * std::sin(a)});
    }
    return MetricGraph({{0, r, 0.0}}, {e});
}

MetricGraph make_tadpole() {
    const double r = 1.0 / std::numbers::pi;
    Edge loop{1, 1, 1, 2.0, {}};
    for (int k = 0; k <= 32; ++k) {
        const double a = std::numbers::pi + 2.0 * std::numbers::pi * k / 32.0;
        loop.geometry.push_back({1.0 + r + r * std::cos(a), r * std::sin(a)});
    }
    return MetricGraph({{0, 0.0, 0.0}, {1, 1.0, 0.0}}, {{0, 0, 1, 1.0, {}}, loop});
}

MetricGraph make_star(int arms, double arm_length) {
    if (arms < 1) throw std::invalid_argument("star graph needs at least one arm");
    std::vector<Vertex> vs{{0, 0.0, 0.0}};
    std::vector<Edge> es;
    for (int k = 0; k < arms; ++k) {
        const double a = 2.0 * std::numbers::pi * k / arms;
        vs.push_back({k + 1, arm_length * std::cos(a), arm_length * std::sin(a)});
        es.push_back({k, 0, k + 1, arm_length, {}});
    }
    return MetricGraph(std::move(vs), std::move(es));
}

MetricGraph make_lattice(int rows, int cols, double spacing) {
    if (rows < 1 || cols < 1 || rows * cols < 2)
        throw std::invalid_argument("lattice needs at least two vertices");
    std::vector<Vertex> vs;
    std::vector<Edge> es;
    auto idx = [cols](int r, int c) { return r * cols + c; };
    for (int r = 0; r < rows; ++r)
        for (int c = 0; c < cols; ++c) vs.push_back({idx(r, c), c * spacing, r * spacing});
    int id = 0;
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) {
            if (c + 1 < cols) es.push_back({id++, idx(r, c), idx(r, c + 1), spacing, {}});
            if (r + 1 < rows) es.push_back({id++, idx(r, c), idx(r + 1, c), spacing, {}});
        }
    }
    return MetricGraph(std::move(vs), std::move(es));
}

std::optional<MetricGraph> make_builtin(const std::string& spec) {
    const auto colon = spec.find(':');
    const std::string name = spec.substr(0, colon);
    const std::string arg = colon == std::string::npos ? "" : spec.substr(colon + 1);
    auto number = [&](double fallback) {
        if (arg.empty()) return fallback;
        std::size_t used = 0;
        const double v = std::stod(arg, &used);
        if (used != arg.size()) throw std::invalid_argument("bad builtin graph argument: " + spec);
        return v;
    };
    if (name == "interval") return make_interval(number(1.0));
    if (name == "circle") return make_circle(number(2.0));
    if (name == "tadpole") return make_tadpole();
    if (name == "star") return make_star(static_cast<int>(number(3.0)));
    if (name == "lattice") {
        const auto x = arg.find('x');
        if (x == std::string::npos) throw std::invalid_argument("lattice spec must be lattice:RxC");
        return make_lattice(std::stoi(arg.substr(0, x)), std::stoi(arg.substr(x + 1)));
    }
    return std::nullopt;
}

}  // namespace graphfield
