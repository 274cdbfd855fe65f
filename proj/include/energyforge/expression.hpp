#ifndef ENERGYFORGE_EXPRESSION_HPP
#define ENERGYFORGE_EXPRESSION_HPP

// Recursive-descent parser/evaluator for vector-field component expressions.
// Grammar: reals, coordinate names, parameters, + - * / ^, sin, cos, exp,
// parentheses, unary minus, and the constant pi.

#include <cctype>
#include <cmath>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace energyforge {

struct ParseError : std::runtime_error {
    int column;  // 1-based
    ParseError(const std::string& msg, int col)
        : std::runtime_error(msg + " at column " + std::to_string(col)), column(col) {}
};

class Expr {
  public:
    virtual ~Expr() = default;
    virtual double eval(const double* coords) const = 0;
};

using ExprPtr = std::shared_ptr<const Expr>;

namespace detail {

struct ConstExpr final : Expr {
    double value;
    explicit ConstExpr(double v) : value(v) {}
    double eval(const double*) const override { return value; }
};

struct CoordExpr final : Expr {
    int index;
    explicit CoordExpr(int i) : index(i) {}
    double eval(const double* coords) const override { return coords[index]; }
};

struct UnaryExpr final : Expr {
    char op;  // '-' or function id 's','c','e'
    ExprPtr arg;
    UnaryExpr(char o, ExprPtr a) : op(o), arg(std::move(a)) {}
    double eval(const double* coords) const override {
        double v = arg->eval(coords);
        switch (op) {
            case '-': return -v;
            case 's': return std::sin(v);
            case 'c': return std::cos(v);
            case 'e': return std::exp(v);
        }
        return v;
    }
};

struct BinaryExpr final : Expr {
    char op;
    ExprPtr lhs, rhs;
    BinaryExpr(char o, ExprPtr l, ExprPtr r) : op(o), lhs(std::move(l)), rhs(std::move(r)) {}
    double eval(const double* coords) const override {
        double a = lhs->eval(coords), b = rhs->eval(coords);
        switch (op) {
            case '+': return a + b;
            case '-': return a - b;
            case '*': return a * b;
            case '/': return a / b;
            case '^': return std::pow(a, b);
        }
        return 0;
    }
};

class Parser {
  public:
    Parser(const std::string& src, const std::vector<std::string>& coords,
           const std::map<std::string, double>& params)
        : src_(src), coords_(coords), params_(params) {}

    ExprPtr parse() {
        skip_ws();
        ExprPtr e = expr();
        skip_ws();
        if (pos_ < src_.size()) throw ParseError("unexpected character", col());
        return e;
    }

  private:
    const std::string& src_;
    const std::vector<std::string>& coords_;
    const std::map<std::string, double>& params_;
    size_t pos_ = 0;
    std::vector<int> open_parens_;

    int col() const { return static_cast<int>(pos_) + 1; }
    void skip_ws() { while (pos_ < src_.size() && std::isspace((unsigned char)src_[pos_])) ++pos_; }
    bool eof() { skip_ws(); return pos_ >= src_.size(); }
    char peek() { skip_ws(); return pos_ < src_.size() ? src_[pos_] : '\0'; }

    [[noreturn]] void fail_operand() {
        if (eof() && !open_parens_.empty())
            throw ParseError("unclosed parenthesis", open_parens_.back());
        if (eof()) throw ParseError("unexpected end of expression", col());
        throw ParseError("unexpected character", col());
    }

    ExprPtr expr() {
        ExprPtr lhs = term();
        while (true) {
            char c = peek();
            if (c != '+' && c != '-') break;
            ++pos_;
            lhs = std::make_shared<BinaryExpr>(c, lhs, term());
        }
        return lhs;
    }

    ExprPtr term() {
        ExprPtr lhs = unary();
        while (true) {
            char c = peek();
            if (c != '*' && c != '/') break;
            ++pos_;
            lhs = std::make_shared<BinaryExpr>(c, lhs, unary());
        }
        return lhs;
    }

    // unary minus binds looser than '^', so -x^2 == -(x^2)
    ExprPtr unary() {
        if (peek() == '-') {
            ++pos_;
            return std::make_shared<UnaryExpr>('-', unary());
        }
        return power();
    }

    ExprPtr power() {  // right associative; exponent may carry a sign
        ExprPtr base = primary();
        if (peek() == '^') {
            ++pos_;
            return std::make_shared<BinaryExpr>('^', base, unary());
        }
        return base;
    }

    ExprPtr primary() {
        char c = peek();
        if (c == '(') {
            open_parens_.push_back(col());
            ++pos_;
            ExprPtr inner = expr();
            if (peek() != ')') fail_operand();
            ++pos_;
            open_parens_.pop_back();
            return inner;
        }
        if (std::isdigit((unsigned char)c) || c == '.') return number();
        if (std::isalpha((unsigned char)c) || c == '_') return identifier();
        fail_operand();
    }

    ExprPtr number() {
        int start_col = col();
        size_t end = pos_;
        while (end < src_.size() &&
               (std::isdigit((unsigned char)src_[end]) || src_[end] == '.' ||
                src_[end] == 'e' || src_[end] == 'E' ||
                ((src_[end] == '+' || src_[end] == '-') && end > pos_ &&
                 (src_[end - 1] == 'e' || src_[end - 1] == 'E'))))
            ++end;
        try {
            size_t used = 0;
            double v = std::stod(src_.substr(pos_, end - pos_), &used);
            pos_ += used;
            return std::make_shared<ConstExpr>(v);
        } catch (const std::exception&) {
            throw ParseError("malformed number", start_col);
        }
    }

    ExprPtr identifier() {
        int start_col = col();
        size_t end = pos_;
        while (end < src_.size() &&
               (std::isalnum((unsigned char)src_[end]) || src_[end] == '_'))
            ++end;
        std::string name = src_.substr(pos_, end - pos_);
        pos_ = end;
        if (name == "sin" || name == "cos" || name == "exp") {
            if (peek() != '(') throw ParseError("expected '(' after function", col());
            open_parens_.push_back(col());
            ++pos_;
            ExprPtr arg = expr();
            if (peek() != ')') fail_operand();
            ++pos_;
            open_parens_.pop_back();
            return std::make_shared<UnaryExpr>(name[0] == 's' ? 's' : name[0] == 'c' ? 'c' : 'e',
                                               arg);
        }
        if (name == "pi") return std::make_shared<ConstExpr>(3.14159265358979323846);
        for (size_t i = 0; i < coords_.size(); ++i)
            if (coords_[i] == name) return std::make_shared<CoordExpr>(static_cast<int>(i));
        auto it = params_.find(name);
        if (it != params_.end()) return std::make_shared<ConstExpr>(it->second);
        throw ParseError("unknown identifier '" + name + "'", start_col);
    }
};

}  // namespace detail

inline ExprPtr parse_expression(const std::string& src,
                                const std::vector<std::string>& coord_names,
                                const std::map<std::string, double>& params = {}) {
    return detail::Parser(src, coord_names, params).parse();
}

// Splits "expr1, expr2" on top-level commas (commas inside parentheses stay).
inline std::vector<std::string> split_components(const std::string& src) {
    std::vector<std::string> out;
    int depth = 0;
    std::string cur;
    for (char c : src) {
        if (c == '(') ++depth;
        if (c == ')') --depth;
        if (c == ',' && depth == 0) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace energyforge

#endif
