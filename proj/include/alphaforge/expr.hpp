#pragma once

// Alpha expression language: AST, recursive-descent parser, validator and
// canonical formatter.
//
// Grammar (whitespace-insensitive, expression-only):
//   expr    := term (('+' | '-') term)*
//   term    := unary (('*' | '/') unary)*
//   unary   := '-' unary | primary
//   primary := NUMBER | IDENT | IDENT '(' args ')' | '(' expr ')'
//   args    := expr (',' expr)*
//
// Precedence: unary minus > {*, /} > {+, -}; binary operators are
// left-associative. Identifiers are lowercase ASCII with underscores.
// Window arguments must be syntactic integer literals. Literals produced by
// the parser are always non-negative (unary minus owns the sign).

#include <cctype>
#include <charconv>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

#include "alphaforge/util.hpp"

namespace alphaforge::expr {

// ---------------------------------------------------------------------------
// AST
// ---------------------------------------------------------------------------

enum class NodeKind { Literal, Field, Negate, Binary, Call, RetType };
enum class BinaryOp { Add, Sub, Mul, Div };

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
    NodeKind kind = NodeKind::Literal;
    double value = 0.0;       // Literal
    bool is_int = false;      // Literal: written without '.'/exponent
    std::string name;         // Field, Call, RetType
    BinaryOp op = BinaryOp::Add;
    std::vector<ExprPtr> args;  // Negate: 1, Binary: 2 (lhs, rhs), Call: n
    size_t span_start = 0, span_end = 0;
};

inline ExprPtr make_literal(double v, bool is_int) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::Literal;
    e->value = v;
    e->is_int = is_int;
    return e;
}
inline ExprPtr make_field(std::string name) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::Field;
    e->name = std::move(name);
    return e;
}
inline ExprPtr make_negate(ExprPtr operand) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::Negate;
    e->args = {std::move(operand)};
    return e;
}
inline ExprPtr make_binary(BinaryOp op, ExprPtr lhs, ExprPtr rhs) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::Binary;
    e->op = op;
    e->args = {std::move(lhs), std::move(rhs)};
    return e;
}
inline ExprPtr make_call(std::string name, std::vector<ExprPtr> args) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::Call;
    e->name = std::move(name);
    e->args = std::move(args);
    return e;
}
inline ExprPtr make_rettype(std::string name) {
    auto e = std::make_shared<Expr>();
    e->kind = NodeKind::RetType;
    e->name = std::move(name);
    return e;
}

// Structural equality; source spans are ignored.
inline bool equal(const Expr& a, const Expr& b) {
    if (a.kind != b.kind) return false;
    switch (a.kind) {
        case NodeKind::Literal:
            return a.value == b.value && a.is_int == b.is_int;
        case NodeKind::Field:
        case NodeKind::RetType:
            return a.name == b.name;
        case NodeKind::Negate:
            return equal(*a.args[0], *b.args[0]);
        case NodeKind::Binary:
            return a.op == b.op && equal(*a.args[0], *b.args[0]) && equal(*a.args[1], *b.args[1]);
        case NodeKind::Call: {
            if (a.name != b.name || a.args.size() != b.args.size()) return false;
            for (size_t i = 0; i < a.args.size(); ++i)
                if (!equal(*a.args[i], *b.args[i])) return false;
            return true;
        }
    }
    return false;
}
inline bool equal(const ExprPtr& a, const ExprPtr& b) { return a && b && equal(*a, *b); }

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

enum class ErrorClass {
    Lexical,
    UnbalancedParens,
    UnknownFunction,
    UnknownField,
    ArityMismatch,
    BadParameter,
    ForbiddenConstruct,
};

inline const char* error_class_name(ErrorClass c) {
    switch (c) {
        case ErrorClass::Lexical: return "lexical";
        case ErrorClass::UnbalancedParens: return "unbalanced_parentheses";
        case ErrorClass::UnknownFunction: return "unknown_function";
        case ErrorClass::UnknownField: return "unknown_field";
        case ErrorClass::ArityMismatch: return "arity_mismatch";
        case ErrorClass::BadParameter: return "bad_parameter";
        case ErrorClass::ForbiddenConstruct: return "forbidden_construct";
    }
    return "unknown";
}

struct ParseError {
    ErrorClass cls = ErrorClass::Lexical;
    size_t span_start = 0;
    size_t span_end = 0;
    std::string message;
    std::string guidance;  // fed into the repair prompt; never empty

    nlohmann::ordered_json to_json() const {
        return {{"class", error_class_name(cls)},
                {"span_start", span_start},
                {"span_end", span_end},
                {"message", message},
                {"guidance", guidance}};
    }
};

// ---------------------------------------------------------------------------
// Registry: the closed function and field sets
// ---------------------------------------------------------------------------

enum class ArgKind { Value, Window, Percentile, RetType };

struct FunctionSig {
    std::vector<ArgKind> args;
    int min_window = 1;
};

inline const std::map<std::string, FunctionSig>& function_registry() {
    static const std::map<std::string, FunctionSig> reg = {
        {"power", {{ArgKind::Value, ArgKind::Value}}},
        {"sqrt", {{ArgKind::Value}}},
        {"log", {{ArgKind::Value}}},
        {"abs", {{ArgKind::Value}}},
        {"sign", {{ArgKind::Value}}},
        {"rank", {{ArgKind::Value}}},
        {"scale", {{ArgKind::Value}}},
        {"zscore", {{ArgKind::Value}}},
        {"winsorize", {{ArgKind::Value, ArgKind::Percentile}}},
        {"delta", {{ArgKind::Value, ArgKind::Window}}},
        {"delay", {{ArgKind::Value, ArgKind::Window}}},
        {"ts_rank", {{ArgKind::Value, ArgKind::Window}}},
        {"ts_min", {{ArgKind::Value, ArgKind::Window}}},
        {"ts_max", {{ArgKind::Value, ArgKind::Window}}},
        {"ts_mean", {{ArgKind::Value, ArgKind::Window}}},
        {"ts_std", {{ArgKind::Value, ArgKind::Window}}},
        {"ts_regression", {{ArgKind::Value, ArgKind::Value, ArgKind::Window, ArgKind::RetType}, 2}},
        {"decay_linear", {{ArgKind::Value, ArgKind::Window}}},
        {"correlation", {{ArgKind::Value, ArgKind::Value, ArgKind::Window}, 2}},
        {"market_neutralize", {{ArgKind::Value}}},
    };
    return reg;
}

inline const std::vector<std::string>& panel_field_names() {
    static const std::vector<std::string> fields = {
        "open", "high", "low", "close", "volume",
        "returns", "vwap", "dollar_volume",
        "adv_5", "adv_10", "adv_20", "adv_30", "adv_50",
        "volatility_10", "volatility_20", "volatility_30",
        "log_returns", "high_low_range", "close_to_open", "typical_price",
        "turnover_proxy", "momentum_5", "momentum_20",
    };
    return fields;
}

inline const std::set<std::string>& rettype_keywords() {
    static const std::set<std::string> kw = {"slope", "residual", "fitted"};
    return kw;
}

struct Schema {
    std::set<std::string> fields;
    std::map<std::string, FunctionSig> functions;
};

inline const Schema& default_schema() {
    static const Schema schema = [] {
        Schema s;
        s.fields.insert(panel_field_names().begin(), panel_field_names().end());
        s.functions = function_registry();
        return s;
    }();
    return schema;
}

// ---------------------------------------------------------------------------
// Input sanitization
// ---------------------------------------------------------------------------

// Strips model formatting noise: enclosing backtick fences and a leading
// "Alpha Expression:" label. Interior backticks are left for the lexer to
// reject.
inline std::string sanitize(std::string_view raw) {
    std::string s = trim(raw);
    bool changed = true;
    while (changed && !s.empty()) {
        changed = false;
        if (s.starts_with("```") && s.size() >= 6 && s.ends_with("```")) {
            s = trim(s.substr(3, s.size() - 6));
            // Drop a fence language tag ("```text\n...").
            size_t nl = s.find('\n');
            if (nl != std::string::npos) {
                std::string first = trim(s.substr(0, nl));
                bool word = !first.empty();
                for (char c : first)
                    if (!std::isalpha(static_cast<unsigned char>(c))) word = false;
                if (word) s = trim(s.substr(nl + 1));
            }
            changed = true;
            continue;
        }
        if (s.size() >= 2 && s.front() == '`' && s.back() == '`') {
            s = trim(s.substr(1, s.size() - 2));
            changed = true;
            continue;
        }
        static const std::string label = "alpha expression:";
        if (s.size() > label.size() && to_lower(s.substr(0, label.size())) == label) {
            s = trim(s.substr(label.size()));
            changed = true;
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Parser
// ---------------------------------------------------------------------------

using ParseResult = std::variant<ExprPtr, ParseError>;

namespace detail {

enum class Tok { Number, Ident, Plus, Minus, Star, Slash, LParen, RParen, Comma, Error, End };

struct Token {
    Tok kind;
    size_t start, end;
    std::string text;
    double num = 0;
    bool is_int = false;
};

struct ParseFail {
    ParseError err;
};

[[noreturn]] inline void fail(ErrorClass cls, size_t start, size_t end, std::string msg,
                              std::string guidance) {
    throw ParseFail{ParseError{cls, start, end, std::move(msg), std::move(guidance)}};
}

struct LexOut {
    std::vector<Token> tokens;
    std::optional<ParseError> error;  // set when lexing stopped early
};

// Tokenizes up to the first bad character. A lexical problem does not throw
// here: it becomes a trailing Error token, so the parser reports whichever
// error (lexical or syntactic) occurs first by position.
inline LexOut lex(const std::string& s) {
    LexOut out;
    auto stop = [&](ErrorClass cls, size_t start, size_t end, std::string msg,
                    std::string guidance) {
        out.error = ParseError{cls, start, end, std::move(msg), std::move(guidance)};
        out.tokens.push_back({Tok::Error, start, end, ""});
        out.tokens.push_back({Tok::End, s.size(), s.size(), ""});
    };
    size_t i = 0;
    while (i < s.size()) {
        char c = s[i];
        if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
            ++i;
            continue;
        }
        if (c == '?' || c == ':') {
            stop(ErrorClass::ForbiddenConstruct, i, i + 1,
                 "ternary operator '? :' is not part of the expression language",
                 "Remove the conditional. Express regime switches with sign(), rank() or "
                 "rolling ts_min/ts_max compositions instead of '? :'.");
            return out;
        }
        if (c == '`') {
            stop(ErrorClass::Lexical, i, i + 1, "stray backtick inside expression",
                 "Remove all backticks; reply with the bare expression only.");
            return out;
        }
        if (c == '+') { out.tokens.push_back({Tok::Plus, i, i + 1, "+"}); ++i; continue; }
        if (c == '-') { out.tokens.push_back({Tok::Minus, i, i + 1, "-"}); ++i; continue; }
        if (c == '*') { out.tokens.push_back({Tok::Star, i, i + 1, "*"}); ++i; continue; }
        if (c == '/') { out.tokens.push_back({Tok::Slash, i, i + 1, "/"}); ++i; continue; }
        if (c == '(') { out.tokens.push_back({Tok::LParen, i, i + 1, "("}); ++i; continue; }
        if (c == ')') { out.tokens.push_back({Tok::RParen, i, i + 1, ")"}); ++i; continue; }
        if (c == ',') { out.tokens.push_back({Tok::Comma, i, i + 1, ","}); ++i; continue; }
        if (std::isdigit(static_cast<unsigned char>(c))) {
            size_t j = i;
            bool has_dot = false, has_exp = false;
            while (j < s.size()) {
                char d = s[j];
                if (std::isdigit(static_cast<unsigned char>(d))) { ++j; continue; }
                if (d == '.' && !has_dot && !has_exp) { has_dot = true; ++j; continue; }
                if ((d == 'e' || d == 'E') && !has_exp && j + 1 < s.size() &&
                    (std::isdigit(static_cast<unsigned char>(s[j + 1])) ||
                     ((s[j + 1] == '+' || s[j + 1] == '-') && j + 2 < s.size() &&
                      std::isdigit(static_cast<unsigned char>(s[j + 2]))))) {
                    has_exp = true;
                    ++j;
                    if (s[j] == '+' || s[j] == '-') ++j;
                    continue;
                }
                break;
            }
            std::string text = s.substr(i, j - i);
            double v = 0;
            auto res = std::from_chars(text.data(), text.data() + text.size(), v);
            if (res.ec != std::errc()) {
                stop(ErrorClass::Lexical, i, j, "malformed numeric literal '" + text + "'",
                     "Write numbers as plain decimals, e.g. 0.5 or 10.");
                return out;
            }
            out.tokens.push_back({Tok::Number, i, j, text, v, !has_dot && !has_exp});
            i = j;
            continue;
        }
        if (std::islower(static_cast<unsigned char>(c)) || c == '_') {
            size_t j = i;
            while (j < s.size() && (std::islower(static_cast<unsigned char>(s[j])) ||
                                    std::isdigit(static_cast<unsigned char>(s[j])) || s[j] == '_'))
                ++j;
            out.tokens.push_back({Tok::Ident, i, j, s.substr(i, j - i)});
            i = j;
            continue;
        }
        if (std::isupper(static_cast<unsigned char>(c))) {
            stop(ErrorClass::Lexical, i, i + 1,
                 std::string("uppercase character '") + c + "' in identifier",
                 "Identifiers are lowercase ASCII with underscores, e.g. ts_mean, close.");
            return out;
        }
        stop(ErrorClass::Lexical, i, i + 1, std::string("unexpected character '") + c + "'",
             "Use only numbers, field names, function calls, + - * / and parentheses.");
        return out;
    }
    out.tokens.push_back({Tok::End, s.size(), s.size(), ""});
    return out;
}

class Parser {
  public:
    explicit Parser(LexOut lexed) : toks_(std::move(lexed.tokens)), lex_error_(lexed.error) {}

    ExprPtr run() {
        if (toks_.size() == 1) {
            fail(ErrorClass::Lexical, 0, 0, "empty expression",
                 "Reply with exactly one alpha expression, e.g. rank(delta(close, 5)).");
        }
        ExprPtr e = expression();
        const Token& t = peek();
        if (t.kind == Tok::RParen) {
            fail(ErrorClass::UnbalancedParens, t.start, t.end, "unmatched closing parenthesis",
                 "Balance the parentheses: every '(' needs exactly one ')'.");
        }
        if (t.kind != Tok::End) {
            fail(ErrorClass::Lexical, t.start, t.end,
                 "unexpected trailing input '" + t.text + "'",
                 "Reply with exactly ONE expression and nothing after it.");
        }
        return e;
    }

  private:
    const Token& peek() const {
        const Token& t = toks_[pos_];
        if (t.kind == Tok::Error) throw ParseFail{*lex_error_};
        return t;
    }
    const Token& advance() { return toks_[pos_++]; }
    bool check(Tok k) const { return peek().kind == k; }

    ExprPtr expression() {
        ExprPtr lhs = term();
        while (check(Tok::Plus) || check(Tok::Minus)) {
            BinaryOp op = check(Tok::Plus) ? BinaryOp::Add : BinaryOp::Sub;
            advance();
            ExprPtr rhs = term();
            auto node = std::make_shared<Expr>();
            node->kind = NodeKind::Binary;
            node->op = op;
            node->span_start = lhs->span_start;
            node->span_end = rhs->span_end;
            node->args = {std::move(lhs), std::move(rhs)};
            lhs = node;
        }
        return lhs;
    }

    ExprPtr term() {
        ExprPtr lhs = unary();
        while (check(Tok::Star) || check(Tok::Slash)) {
            BinaryOp op = check(Tok::Star) ? BinaryOp::Mul : BinaryOp::Div;
            advance();
            ExprPtr rhs = unary();
            auto node = std::make_shared<Expr>();
            node->kind = NodeKind::Binary;
            node->op = op;
            node->span_start = lhs->span_start;
            node->span_end = rhs->span_end;
            node->args = {std::move(lhs), std::move(rhs)};
            lhs = node;
        }
        return lhs;
    }

    ExprPtr unary() {
        if (check(Tok::Minus)) {
            const Token& t = advance();
            ExprPtr operand = unary();
            auto node = std::make_shared<Expr>();
            node->kind = NodeKind::Negate;
            node->span_start = t.start;
            node->span_end = operand->span_end;
            node->args = {std::move(operand)};
            return node;
        }
        return primary();
    }

    ExprPtr primary() {
        const Token& t = peek();
        if (t.kind == Tok::Number) {
            advance();
            auto node = std::make_shared<Expr>();
            node->kind = NodeKind::Literal;
            node->value = t.num;
            node->is_int = t.is_int;
            node->span_start = t.start;
            node->span_end = t.end;
            return node;
        }
        if (t.kind == Tok::Ident) {
            advance();
            if (check(Tok::LParen)) return call(t);
            if (!default_schema().fields.count(t.text)) {
                fail(ErrorClass::UnknownField, t.start, t.end,
                     "unknown variable '" + t.text + "'",
                     "Use only the documented market data variables: open, high, low, close, "
                     "vwap, returns, volume, adv_5..adv_50, volatility_10/20/30.");
            }
            auto node = std::make_shared<Expr>();
            node->kind = NodeKind::Field;
            node->name = t.text;
            node->span_start = t.start;
            node->span_end = t.end;
            return node;
        }
        if (t.kind == Tok::LParen) {
            advance();
            ExprPtr inner = expression();
            if (!check(Tok::RParen)) {
                fail(ErrorClass::UnbalancedParens, t.start, peek().start,
                     "missing closing parenthesis",
                     "Balance the parentheses: every '(' needs exactly one ')'.");
            }
            const Token& close = advance();
            auto node = std::make_shared<Expr>(*inner);
            node->span_start = t.start;
            node->span_end = close.end;
            return node;
        }
        if (t.kind == Tok::End) {
            fail(ErrorClass::UnbalancedParens, t.start, t.end, "unexpected end of expression",
                 "The expression ends mid-construct; check for a missing operand or ')'.");
        }
        if (t.kind == Tok::RParen) {
            fail(ErrorClass::UnbalancedParens, t.start, t.end,
                 "closing parenthesis where a value was expected",
                 "Balance the parentheses: every '(' needs exactly one ')'.");
        }
        fail(ErrorClass::Lexical, t.start, t.end, "unexpected token '" + t.text + "'",
             "Use only numbers, field names, function calls, + - * / and parentheses.");
    }

    ExprPtr call(const Token& name_tok) {
        auto it = function_registry().find(name_tok.text);
        if (it == function_registry().end()) {
            fail(ErrorClass::UnknownFunction, name_tok.start, name_tok.end,
                 "unknown function '" + name_tok.text + "'",
                 "Use only the documented alpha functions (rank, scale, zscore, winsorize, "
                 "delta, delay, ts_rank, ts_min, ts_max, ts_mean, ts_std, ts_regression, "
                 "decay_linear, correlation, market_neutralize, power, sqrt, log, abs, sign).");
        }
        const FunctionSig& sig = it->second;
        advance();  // '('
        std::vector<ExprPtr> args;
        if (!check(Tok::RParen)) {
            while (true) {
                ArgKind expected =
                    args.size() < sig.args.size() ? sig.args[args.size()] : ArgKind::Value;
                args.push_back(argument(expected, name_tok.text, args.size(), sig));
                if (check(Tok::Comma)) {
                    advance();
                    continue;
                }
                break;
            }
        }
        if (!check(Tok::RParen)) {
            fail(ErrorClass::UnbalancedParens, name_tok.start, peek().start,
                 "missing closing parenthesis in call to '" + name_tok.text + "'",
                 "Balance the parentheses: every '(' needs exactly one ')'.");
        }
        const Token& close = advance();
        if (args.size() != sig.args.size()) {
            fail(ErrorClass::ArityMismatch, name_tok.start, close.end,
                 name_tok.text + " takes " + std::to_string(sig.args.size()) +
                     " argument(s), got " + std::to_string(args.size()),
                 arity_guidance(name_tok.text, sig));
        }
        auto node = std::make_shared<Expr>();
        node->kind = NodeKind::Call;
        node->name = name_tok.text;
        node->span_start = name_tok.start;
        node->span_end = close.end;
        node->args = std::move(args);
        return node;
    }

    ExprPtr argument(ArgKind expected, const std::string& fn, size_t index,
                     const FunctionSig& sig) {
        if (expected == ArgKind::RetType) {
            const Token& t = peek();
            // A bare identifier here is a rettype keyword, not a field lookup.
            if (t.kind == Tok::Ident && toks_[pos_ + 1].kind != Tok::LParen) {
                advance();
                if (!rettype_keywords().count(t.text)) {
                    fail(ErrorClass::BadParameter, t.start, t.end,
                         fn + " rettype must be one of slope, residual, fitted (got '" +
                             t.text + "')",
                         "Pass the return type keyword literally, e.g. "
                         "ts_regression(close, volume, 20, slope).");
                }
                auto node = std::make_shared<Expr>();
                node->kind = NodeKind::RetType;
                node->name = t.text;
                node->span_start = t.start;
                node->span_end = t.end;
                return node;
            }
            ExprPtr e = expression();
            fail(ErrorClass::BadParameter, t.start, e->span_end,
                 fn + " argument " + std::to_string(index + 1) +
                     " must be one of slope, residual, fitted",
                 "Pass the return type keyword literally, e.g. "
                 "ts_regression(close, volume, 20, slope).");
        }
        const Token& t = peek();
        ExprPtr e = expression();
        if (expected == ArgKind::Window) {
            if (e->kind != NodeKind::Literal || !e->is_int) {
                fail(ErrorClass::BadParameter, t.start, e->span_end,
                     fn + " window (argument " + std::to_string(index + 1) +
                         ") must be an integer literal",
                     "Write the window as a plain integer, e.g. " + fn + "(close, 10).");
            }
            if (e->value < sig.min_window) {
                fail(ErrorClass::BadParameter, t.start, e->span_end,
                     fn + " window must be >= " + std::to_string(sig.min_window),
                     "Increase the window to at least " + std::to_string(sig.min_window) + ".");
            }
        }
        if (expected == ArgKind::Percentile) {
            if (e->kind != NodeKind::Literal) {
                fail(ErrorClass::BadParameter, t.start, e->span_end,
                     fn + " percentile must be a numeric literal",
                     "Write the percentile as a number strictly between 0 and 100, e.g. "
                     "winsorize(close, 95).");
            }
            if (!(e->value > 0.0 && e->value < 100.0)) {
                fail(ErrorClass::BadParameter, t.start, e->span_end,
                     fn + " percentile must lie strictly between 0 and 100",
                     "Pick a percentile strictly between 0 and 100, e.g. 95.");
            }
        }
        return e;
    }

    static std::string arity_guidance(const std::string& fn, const FunctionSig& sig) {
        std::vector<std::string> parts;
        for (ArgKind k : sig.args) {
            switch (k) {
                case ArgKind::Value: parts.push_back("x"); break;
                case ArgKind::Window: parts.push_back("n"); break;
                case ArgKind::Percentile: parts.push_back("p"); break;
                case ArgKind::RetType: parts.push_back("rettype"); break;
            }
        }
        return "Call as " + fn + "(" + join(parts, ", ") + ").";
    }

    std::vector<Token> toks_;
    std::optional<ParseError> lex_error_;
    size_t pos_ = 0;
};

}  // namespace detail

// Parses one expression, reporting the FIRST error by character position
// (spans index the sanitized text).
inline ParseResult parse(std::string_view raw) {
    std::string text = sanitize(raw);
    try {
        detail::Parser parser(detail::lex(text));
        return parser.run();
    } catch (const detail::ParseFail& f) {
        return f.err;
    }
}

inline bool is_error(const ParseResult& r) { return std::holds_alternative<ParseError>(r); }
inline const ParseError& get_error(const ParseResult& r) { return std::get<ParseError>(r); }
inline const ExprPtr& get_expr(const ParseResult& r) { return std::get<ExprPtr>(r); }

// ---------------------------------------------------------------------------
// Validation (aggregates ALL problems, unlike parse)
// ---------------------------------------------------------------------------

namespace detail {

inline void validate_walk(const Expr& e, const Schema& schema, bool rettype_ok,
                          std::vector<ParseError>& out) {
    switch (e.kind) {
        case NodeKind::Literal:
            break;
        case NodeKind::RetType:
            if (!rettype_ok) {
                out.push_back({ErrorClass::BadParameter, e.span_start, e.span_end,
                               "'" + e.name + "' is only valid as the rettype of ts_regression",
                               "Use slope/residual/fitted only inside ts_regression."});
            }
            break;
        case NodeKind::Field:
            if (!schema.fields.count(e.name)) {
                out.push_back({ErrorClass::UnknownField, e.span_start, e.span_end,
                               "unknown variable '" + e.name + "'",
                               "Use only the documented market data variables."});
            }
            break;
        case NodeKind::Negate:
            validate_walk(*e.args[0], schema, false, out);
            break;
        case NodeKind::Binary:
            validate_walk(*e.args[0], schema, false, out);
            validate_walk(*e.args[1], schema, false, out);
            break;
        case NodeKind::Call: {
            auto it = schema.functions.find(e.name);
            if (it == schema.functions.end()) {
                out.push_back({ErrorClass::UnknownFunction, e.span_start, e.span_end,
                               "unknown function '" + e.name + "'",
                               "Use only the documented alpha functions."});
                for (const auto& a : e.args) validate_walk(*a, schema, false, out);
                return;
            }
            const FunctionSig& sig = it->second;
            if (e.args.size() != sig.args.size()) {
                out.push_back({ErrorClass::ArityMismatch, e.span_start, e.span_end,
                               e.name + " takes " + std::to_string(sig.args.size()) +
                                   " argument(s), got " + std::to_string(e.args.size()),
                               "Check the function signature and pass every argument."});
            }
            for (size_t i = 0; i < e.args.size(); ++i) {
                ArgKind kind = i < sig.args.size() ? sig.args[i] : ArgKind::Value;
                const Expr& arg = *e.args[i];
                switch (kind) {
                    case ArgKind::Value:
                        validate_walk(arg, schema, false, out);
                        break;
                    case ArgKind::Window:
                        if (arg.kind != NodeKind::Literal || !arg.is_int) {
                            out.push_back({ErrorClass::BadParameter, arg.span_start, arg.span_end,
                                           e.name + " window must be an integer literal",
                                           "Write the window as a plain integer."});
                        } else if (arg.value < sig.min_window) {
                            out.push_back({ErrorClass::BadParameter, arg.span_start, arg.span_end,
                                           e.name + " window must be >= " +
                                               std::to_string(sig.min_window),
                                           "Increase the window."});
                        }
                        break;
                    case ArgKind::Percentile:
                        if (arg.kind != NodeKind::Literal ||
                            !(arg.value > 0.0 && arg.value < 100.0)) {
                            out.push_back({ErrorClass::BadParameter, arg.span_start, arg.span_end,
                                           e.name + " percentile must lie strictly between 0 "
                                                    "and 100",
                                           "Pick a percentile strictly between 0 and 100."});
                        }
                        break;
                    case ArgKind::RetType:
                        if (arg.kind != NodeKind::RetType ||
                            !rettype_keywords().count(arg.name)) {
                            out.push_back({ErrorClass::BadParameter, arg.span_start, arg.span_end,
                                           e.name + " rettype must be slope, residual or fitted",
                                           "Pass the rettype keyword literally."});
                        }
                        break;
                }
            }
            break;
        }
    }
}

}  // namespace detail

inline std::vector<ParseError> validate(const ExprPtr& e, const Schema& schema = default_schema()) {
    std::vector<ParseError> out;
    if (e) detail::validate_walk(*e, schema, false, out);
    return out;
}

// ---------------------------------------------------------------------------
// Canonical formatting: minimal parentheses, parse(format(e)) == e
// ---------------------------------------------------------------------------

namespace detail {

inline int precedence(const Expr& e) {
    switch (e.kind) {
        case NodeKind::Binary:
            return (e.op == BinaryOp::Mul || e.op == BinaryOp::Div) ? 2 : 1;
        case NodeKind::Negate:
            return 3;
        default:
            return 4;
    }
}

inline std::string format_literal(const Expr& e) {
    if (e.is_int) return std::to_string(static_cast<long long>(e.value));
    std::string s = repr_double(e.value);
    if (s.find('.') == std::string::npos && s.find('e') == std::string::npos &&
        s.find("inf") == std::string::npos && s.find("nan") == std::string::npos)
        s += ".0";
    return s;
}

inline void format_walk(const Expr& e, std::string& out) {
    switch (e.kind) {
        case NodeKind::Literal:
            out += format_literal(e);
            break;
        case NodeKind::Field:
        case NodeKind::RetType:
            out += e.name;
            break;
        case NodeKind::Negate: {
            out += '-';
            const Expr& operand = *e.args[0];
            bool parens = precedence(operand) < 3 || operand.kind == NodeKind::Negate;
            if (parens) out += '(';
            format_walk(operand, out);
            if (parens) out += ')';
            break;
        }
        case NodeKind::Binary: {
            int prec = precedence(e);
            const Expr& lhs = *e.args[0];
            const Expr& rhs = *e.args[1];
            bool lp = precedence(lhs) < prec;
            if (lp) out += '(';
            format_walk(lhs, out);
            if (lp) out += ')';
            switch (e.op) {
                case BinaryOp::Add: out += " + "; break;
                case BinaryOp::Sub: out += " - "; break;
                case BinaryOp::Mul: out += " * "; break;
                case BinaryOp::Div: out += " / "; break;
            }
            bool rp = precedence(rhs) <= prec;
            if (rp) out += '(';
            format_walk(rhs, out);
            if (rp) out += ')';
            break;
        }
        case NodeKind::Call: {
            out += e.name;
            out += '(';
            for (size_t i = 0; i < e.args.size(); ++i) {
                if (i) out += ", ";
                format_walk(*e.args[i], out);
            }
            out += ')';
            break;
        }
    }
}

}  // namespace detail

inline std::string format(const ExprPtr& e) {
    std::string out;
    if (e) detail::format_walk(*e, out);
    return out;
}
inline std::string format(const Expr& e) {
    std::string out;
    detail::format_walk(e, out);
    return out;
}

// ---------------------------------------------------------------------------
// Introspection
// ---------------------------------------------------------------------------

inline void collect_fields(const Expr& e, std::set<std::string>& out) {
    if (e.kind == NodeKind::Field) out.insert(e.name);
    for (const auto& a : e.args) collect_fields(*a, out);
}

inline std::set<std::string> free_fields(const ExprPtr& e) {
    std::set<std::string> out;
    if (e) collect_fields(*e, out);
    return out;
}

}  // namespace alphaforge::expr
