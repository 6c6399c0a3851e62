#pragma once

#include "graphfield/graph.hpp"

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <iosfwd>
#include <string>
#include <vector>

namespace graphfield {

/// Reads a graph from JSON: {"vertices": [{id, x?, y?}], "edges": [{id, from,
/// to, length, geometry?}]}. Vertex references in edges are vertex ids.
/// Throws std::invalid_argument naming the offending field on schema errors.
MetricGraph read_graph_json(const std::string& text);
MetricGraph load_graph(const std::string& path);
std::string write_graph_json(const MetricGraph& graph);

/// Accepts either a builtin spec ("tadpole", "interval:1", ...) or a file path.
MetricGraph resolve_graph(const std::string& spec);

/// Shortest round-trip decimal form with 17 significant digits.
std::string format_double(double v);

void write_csv(std::ostream& out, const std::vector<std::string>& header,
               const Eigen::MatrixXd& rows);
void write_csv_file(const std::string& path, const std::vector<std::string>& header,
                    const Eigen::MatrixXd& rows);

/// Coordinate-format dump "i j value" (0-based) of the stored entries.
void write_matrix_market_like(std::ostream& out, const Eigen::SparseMatrix<double>& m);

std::string read_text_file(const std::string& path);

}  // namespace graphfield
