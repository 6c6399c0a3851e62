#pragma once

#include "graphfield/graph.hpp"

#include <memory>
#include <string>

namespace graphfield {

/// Arithmetic expression over the variables x, y (planar coordinates), edge
/// (edge id), t (arc length) and len (edge length), with + - * / ^, unary
/// minus, the constant pi and the functions exp, log, sqrt, abs, sin, cos,
/// tan, tanh, min, max, pow.
class Expression {
public:
    /// Throws std::invalid_argument with the offending position on parse errors.
    explicit Expression(const std::string& text);

    double operator()(double x, double y, double edge, double t, double len) const;
    /// Evaluate at a graph point.
    double at(const MetricGraph& graph, const GraphPoint& p) const;
    const std::string& text() const { return text_; }

    struct Node;

private:
    std::string text_;
    std::shared_ptr<const Node> root_;
};

/// EdgeFunction wrapper; the graph is copied.
EdgeFunction make_edge_function(const Expression& expr, const MetricGraph& graph);

}  // namespace graphfield
