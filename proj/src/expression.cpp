#include "graphfield/expression.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>
#include <numbers>
#include <stdexcept>
#include <vector>

namespace graphfield {

struct Expression::Node {
    enum Kind { Number, Variable, Unary, Binary, Call } kind = Number;
    double value = 0.0;
    int var = 0;  // x, y, edge, t, len
    char op = 0;
    std::string name;
    std::vector<std::shared_ptr<const Node>> args;

    double eval(const double* vars) const {
        switch (kind) {
            case Number: return value;
            case Variable: return vars[var];
            case Unary: return -args[0]->eval(vars);
            case Binary: {
                const double a = args[0]->eval(vars), b = args[1]->eval(vars);
                switch (op) {
                    case '+': return a + b;
                    case '-': return a - b;
                    case '*': return a * b;
                    case '/': return a / b;
                    default: return std::pow(a, b);
                }
            }
            case Call: {
                const double a = args[0]->eval(vars);
                if (name == "exp") return std::exp(a);
                if (name == "log") return std::log(a);
                if (name == "sqrt") return std::sqrt(a);
                if (name == "abs") return std::abs(a);
                if (name == "sin") return std::sin(a);
                if (name == "cos") return std::cos(a);
                if (name == "tan") return std::tan(a);
                if (name == "tanh") return std::tanh(a);
                const double b = args[1]->eval(vars);
                if (name == "min") return std::min(a, b);
                if (name == "max") return std::max(a, b);
                return std::pow(a, b);
            }
        }
        return 0.0;
    }
};

namespace {

using NodePtr = std::shared_ptr<const Expression::Node>;

int arity(const std::string& f) {
    static const char* one[] = {"exp", "log", "sqrt", "abs", "sin", "cos", "tan", "tanh"};
    static const char* two[] = {"min", "max", "pow"};
    for (const char* n : one)
        if (f == n) return 1;
    for (const char* n : two)
        if (f == n) return 2;
    return 0;
}

// expr := term (('+'|'-') term)*; term := unary (('*'|'/') unary)*;
// unary := '-' unary | power; power := primary ('^' unary)?
class Parser {
public:
    explicit Parser(const std::string& s) : s_(s) {}

    NodePtr parse() {
        NodePtr n = expr();
        skip();
        if (pos_ != s_.size()) fail("unexpected '" + std::string(1, s_[pos_]) + "'");
        return n;
    }

private:
    [[noreturn]] void fail(const std::string& what) const {
        throw std::invalid_argument("expression '" + s_ + "' at position " + std::to_string(pos_) + ": " + what);
    }
    void skip() {
        while (pos_ < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos_]))) ++pos_;
    }
    bool accept(char c) {
        skip();
        if (pos_ < s_.size() && s_[pos_] == c) {
            ++pos_;
            return true;
        }
        return false;
    }
    static NodePtr binary(char op, NodePtr a, NodePtr b) {
        auto n = std::make_shared<Expression::Node>();
        n->kind = Expression::Node::Binary;
        n->op = op;
        n->args = {std::move(a), std::move(b)};
        return n;
    }
    NodePtr expr() {
        NodePtr n = term();
        for (;;) {
            if (accept('+')) n = binary('+', n, term());
            else if (accept('-')) n = binary('-', n, term());
            else return n;
        }
    }
    NodePtr term() {
        NodePtr n = unary();
        for (;;) {
            if (accept('*')) n = binary('*', n, unary());
            else if (accept('/')) n = binary('/', n, unary());
            else return n;
        }
    }
    NodePtr unary() {
        if (accept('-')) {
            auto n = std::make_shared<Expression::Node>();
            n->kind = Expression::Node::Unary;
            n->args = {unary()};
            return n;
        }
        if (accept('+')) return unary();
        NodePtr base = primary();
        if (accept('^')) return binary('^', base, unary());
        return base;
    }
    NodePtr primary() {
        skip();
        if (pos_ >= s_.size()) fail("unexpected end of input");
        auto n = std::make_shared<Expression::Node>();
        const char c = s_[pos_];
        if (accept('(')) {
            NodePtr inner = expr();
            if (!accept(')')) fail("expected ')'");
            return inner;
        }
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') {
            const char* begin = s_.c_str() + pos_;
            char* end = nullptr;
            n->value = std::strtod(begin, &end);
            if (end == begin) fail("malformed number");
            pos_ += static_cast<std::size_t>(end - begin);
            return n;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            std::size_t start = pos_;
            while (pos_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[pos_])) || s_[pos_] == '_')) ++pos_;
            const std::string id = s_.substr(start, pos_ - start);
            static const char* vars[] = {"x", "y", "edge", "t", "len"};
            for (int v = 0; v < 5; ++v)
                if (id == vars[v]) {
                    n->kind = Expression::Node::Variable;
                    n->var = v;
                    return n;
                }
            if (id == "pi") {
                n->value = std::numbers::pi;
                return n;
            }
            const int k = arity(id);
            if (k == 0) {
                pos_ = start;
                fail("unknown identifier '" + id + "'");
            }
            if (!accept('(')) fail("expected '(' after " + id);
            n->kind = Expression::Node::Call;
            n->name = id;
            n->args.push_back(expr());
            for (int i = 1; i < k; ++i) {
                if (!accept(',')) fail(id + " takes " + std::to_string(k) + " arguments");
                n->args.push_back(expr());
            }
            if (!accept(')')) fail("expected ')' after arguments of " + id);
            return n;
        }
        fail("unexpected '" + std::string(1, c) + "'");
    }

    const std::string& s_;
    std::size_t pos_ = 0;
};

}  // namespace

Expression::Expression(const std::string& text) : text_(text), root_(Parser(text_).parse()) {}

double Expression::operator()(double x, double y, double edge, double t, double len) const {
    const double vars[5] = {x, y, edge, t, len};
    return root_->eval(vars);
}

double Expression::at(const MetricGraph& graph, const GraphPoint& p) const {
    const auto xy = graph.coordinates(p);
    const Edge& e = graph.edge(p.edge);
    return (*this)(xy[0], xy[1], static_cast<double>(e.id), p.t, e.length);
}

EdgeFunction make_edge_function(const Expression& expr, const MetricGraph& graph) {
    return [expr, graph](const GraphPoint& p) { return expr.at(graph, p); };
}

}  // namespace graphfield
