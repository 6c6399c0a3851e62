#include "graphfield/io.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace graphfield {

using nlohmann::json;

namespace {

const json& require_field(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key))
        throw std::invalid_argument(where + ": missing field \"" + key + "\"");
    return obj.at(key);
}

int require_int(const json& obj, const char* key, const std::string& where) {
    const json& v = require_field(obj, key, where);
    if (!v.is_number_integer())
        throw std::invalid_argument(where + ": field \"" + key + "\" must be an integer");
    return v.get<int>();
}

double require_number(const json& obj, const char* key, const std::string& where) {
    const json& v = require_field(obj, key, where);
    if (!v.is_number()) throw std::invalid_argument(where + ": field \"" + key + "\" must be a number");
    return v.get<double>();
}

}  // namespace

MetricGraph read_graph_json(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw std::invalid_argument(std::string("graph JSON parse error: ") + e.what());
    }
    const json& jv = require_field(doc, "vertices", "graph");
    const json& je = require_field(doc, "edges", "graph");
    if (!jv.is_array()) throw std::invalid_argument("graph: field \"vertices\" must be an array");
    if (!je.is_array()) throw std::invalid_argument("graph: field \"edges\" must be an array");

    std::vector<Vertex> vertices;
    for (std::size_t i = 0; i < jv.size(); ++i) {
        const std::string where = "vertices[" + std::to_string(i) + "]";
        Vertex v;
        v.id = require_int(jv[i], "id", where);
        if (jv[i].contains("x")) v.x = require_number(jv[i], "x", where);
        if (jv[i].contains("y")) v.y = require_number(jv[i], "y", where);
        vertices.push_back(v);
    }
    auto index_of = [&](int id, const std::string& where) {
        for (std::size_t k = 0; k < vertices.size(); ++k)
            if (vertices[k].id == id) return static_cast<int>(k);
        throw std::invalid_argument(where + ": references unknown vertex id " + std::to_string(id));
    };
    std::vector<Edge> edges;
    for (std::size_t i = 0; i < je.size(); ++i) {
        const std::string where = "edges[" + std::to_string(i) + "]";
        Edge e;
        e.id = require_int(je[i], "id", where);
        e.from = index_of(require_int(je[i], "from", where), where + ".from");
        e.to = index_of(require_int(je[i], "to", where), where + ".to");
        e.length = require_number(je[i], "length", where);
        if (je[i].contains("geometry")) {
            const json& g = je[i].at("geometry");
            if (!g.is_array()) throw std::invalid_argument(where + ": field \"geometry\" must be an array");
            for (const auto& pt : g) {
                if (!pt.is_array() || pt.size() != 2 || !pt[0].is_number() || !pt[1].is_number())
                    throw std::invalid_argument(where + ": field \"geometry\" must hold [x, y] pairs");
                e.geometry.push_back({pt[0].get<double>(), pt[1].get<double>()});
            }
        }
        edges.push_back(std::move(e));
    }
    return MetricGraph(std::move(vertices), std::move(edges));
}

std::string write_graph_json(const MetricGraph& graph) {
    json doc;
    doc["vertices"] = json::array();
    for (const auto& v : graph.vertices()) {
        json jv{{"id", v.id}};
        if (v.x) jv["x"] = *v.x;
        if (v.y) jv["y"] = *v.y;
        doc["vertices"].push_back(jv);
    }
    doc["edges"] = json::array();
    for (const auto& e : graph.edges()) {
        json je{{"id", e.id},
                {"from", graph.vertices()[static_cast<std::size_t>(e.from)].id},
                {"to", graph.vertices()[static_cast<std::size_t>(e.to)].id},
                {"length", e.length}};
        if (!e.geometry.empty()) {
            je["geometry"] = json::array();
            for (const auto& p : e.geometry) je["geometry"].push_back({p[0], p[1]});
        }
        doc["edges"].push_back(je);
    }
    return doc.dump(2) + "\n";
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open file: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

MetricGraph load_graph(const std::string& path) { return read_graph_json(read_text_file(path)); }

MetricGraph resolve_graph(const std::string& spec) {
    if (auto g = make_builtin(spec)) return *g;
    return load_graph(spec);
}

std::string format_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

void write_csv(std::ostream& out, const std::vector<std::string>& header, const Eigen::MatrixXd& rows) {
    for (std::size_t k = 0; k < header.size(); ++k) out << (k ? "," : "") << header[k];
    if (!header.empty()) out << '\n';
    for (Eigen::Index i = 0; i < rows.rows(); ++i) {
        for (Eigen::Index j = 0; j < rows.cols(); ++j) out << (j ? "," : "") << format_double(rows(i, j));
        out << '\n';
    }
}

void write_csv_file(const std::string& path, const std::vector<std::string>& header,
                    const Eigen::MatrixXd& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write file: " + path);
    write_csv(out, header, rows);
}

void write_matrix_market_like(std::ostream& out, const Eigen::SparseMatrix<double>& m) {
    for (int k = 0; k < m.outerSize(); ++k)
        for (Eigen::SparseMatrix<double>::InnerIterator it(m, k); it; ++it)
            out << it.row() << ' ' << it.col() << ' ' << format_double(it.value()) << '\n';
}

}  // namespace graphfield
