#pragma once

#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "trepair/schema.hpp"

namespace trepair {

struct SourcePos {
  int line = 1;
  int col = 1;
};

inline std::string to_string(const SourcePos& p) {
  return std::to_string(p.line) + ":" + std::to_string(p.col);
}

/// Syntax, scoping, or typing problem in rule text.
class RuleError : public std::runtime_error {
 public:
  RuleError(const SourcePos& pos, const std::string& msg)
      : std::runtime_error(to_string(pos) + ": " + msg), pos_(pos) {}
  const SourcePos& pos() const { return pos_; }

 private:
  SourcePos pos_;
};

/// Which database state a body atom reads. Undecorated atoms read the end
/// of the transaction (base plus the transaction's own deltas).
enum class Stage : std::uint8_t { Default, Start, End };

// ---------------------------------------------------------------------------
// Surface syntax tree (what the parser produces and the printer consumes).

struct Expr {
  enum class Kind : std::uint8_t { Var, Const, Func, Rel, Binary, Tuple, Wildcard };
  Kind kind = Kind::Var;
  std::string name;  // variable or predicate name
  Value value;       // Const
  Stage stage = Stage::Default;
  char op = 0;  // Binary: + - *
  std::vector<Expr> args;
  SourcePos pos;

  bool operator==(const Expr& o) const {
    return kind == o.kind && name == o.name && (kind != Kind::Const || value == o.value) && stage == o.stage &&
           op == o.op && args == o.args;
  }
};

struct Literal {
  enum class Kind : std::uint8_t { Atom, Compare, Not, Exists, Group };
  Kind kind = Kind::Atom;
  Expr lhs, rhs;                                // Atom uses lhs; Compare uses both
  std::string op;                               // Compare: = != < <= > >=
  std::vector<std::string> vars;                // Exists (also a quantified Not)
  std::vector<std::vector<Literal>> disjuncts;  // Not / Exists / Group bodies
  SourcePos pos;

  bool operator==(const Literal& o) const {
    return kind == o.kind && lhs == o.lhs && rhs == o.rhs && op == o.op && vars == o.vars &&
           disjuncts == o.disjuncts;
  }
};

struct HeadAtom {
  enum class Mode : std::uint8_t { Derive, Upsert, Retract };
  Mode mode = Mode::Derive;
  std::string pred;
  bool functional = false;
  std::vector<Expr> keys;
  std::vector<Expr> values;
  SourcePos pos;

  bool operator==(const HeadAtom& o) const {
    return mode == o.mode && pred == o.pred && functional == o.functional && keys == o.keys && values == o.values;
  }
};

struct SurfaceRule {
  std::vector<std::string> forall;
  bool constraint = false;
  std::vector<HeadAtom> heads;
  std::vector<std::vector<Literal>> body;  // disjunction of conjunctions
  SourcePos pos;

  bool operator==(const SurfaceRule& o) const {
    return forall == o.forall && constraint == o.constraint && heads == o.heads && body == o.body;
  }
};

// ---------------------------------------------------------------------------
// Lexer

struct Token {
  enum class Kind : std::uint8_t { Ident, Int, String, Sym, End };
  Kind kind;
  std::string text;
  std::int64_t ival = 0;
  SourcePos pos;
};

class Lexer {
 public:
  explicit Lexer(const std::string& src) : s_(src) {}

  std::vector<Token> run() {
    std::vector<Token> out;
    for (;;) {
      skip_space();
      SourcePos p{line_, col_};
      if (i_ >= s_.size()) {
        out.push_back({Token::Kind::End, "", 0, p});
        return out;
      }
      char c = s_[i_];
      if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
        std::string id;
        while (i_ < s_.size() && (std::isalnum(static_cast<unsigned char>(s_[i_])) || s_[i_] == '_' || s_[i_] == ':')) {
          id.push_back(s_[i_]);
          advance();
        }
        out.push_back({Token::Kind::Ident, id, 0, p});
      } else if (std::isdigit(static_cast<unsigned char>(c))) {
        std::string num;
        while (i_ < s_.size() && std::isdigit(static_cast<unsigned char>(s_[i_]))) {
          num.push_back(s_[i_]);
          advance();
        }
        std::int64_t v;
        try {
          v = std::stoll(num);
        } catch (const std::out_of_range&) {
          throw RuleError(p, "integer literal out of range: " + num);
        }
        out.push_back({Token::Kind::Int, num, v, p});
      } else if (c == '"') {
        advance();
        std::string str;
        for (;;) {
          if (i_ >= s_.size()) throw RuleError(p, "unterminated string literal");
          char d = s_[i_];
          advance();
          if (d == '"') break;
          if (d == '\\') {
            if (i_ >= s_.size()) throw RuleError(p, "unterminated string literal");
            char e = s_[i_];
            advance();
            str.push_back(e == 'n' ? '\n' : e == 't' ? '\t' : e);
          } else {
            str.push_back(d);
          }
        }
        out.push_back({Token::Kind::String, str, 0, p});
      } else {
        static const char* two[] = {"<-", "<=", ">=", "!="};
        std::string sym(1, c);
        for (const char* t : two) {
          if (s_.compare(i_, 2, t) == 0) sym = t;
        }
        if (sym.size() == 1 && std::string("^!;,.()[]=<>+-*@").find(c) == std::string::npos) {
          throw RuleError(p, std::string("unexpected character '") + c + "'");
        }
        for (std::size_t k = 0; k < sym.size(); ++k) advance();
        out.push_back({Token::Kind::Sym, sym, 0, p});
      }
    }
  }

 private:
  void advance() {
    if (s_[i_] == '\n') {
      ++line_;
      col_ = 1;
    } else {
      ++col_;
    }
    ++i_;
  }
  void skip_space() {
    while (i_ < s_.size()) {
      if (std::isspace(static_cast<unsigned char>(s_[i_]))) {
        advance();
      } else if (s_.compare(i_, 2, "//") == 0) {
        while (i_ < s_.size() && s_[i_] != '\n') advance();
      } else {
        break;
      }
    }
  }

  const std::string& s_;
  std::size_t i_ = 0;
  int line_ = 1, col_ = 1;
};

// ---------------------------------------------------------------------------
// Parser
//
//   rule    ::= [forall vars .] head <- body .   |  head .
//   head    ::= false | hatom {, hatom}
//   hatom   ::= [^|-] name(args) | [^|-] name[args] [= value]
//   body    ::= conj {; conj}
//   conj    ::= [exists vars .] lit {, lit}
//   lit     ::= ! lit | ( body ) | expr [cmp expr]

class Parser {
 public:
  explicit Parser(const std::string& text) : toks_(Lexer(text).run()) {}

  std::vector<SurfaceRule> parse_all() {
    std::vector<SurfaceRule> out;
    while (peek().kind != Token::Kind::End) out.push_back(parse_rule());
    return out;
  }

 private:
  const Token& peek(std::size_t k = 0) const { return toks_[std::min(p_ + k, toks_.size() - 1)]; }
  bool is_sym(const char* s, std::size_t k = 0) const {
    return peek(k).kind == Token::Kind::Sym && peek(k).text == s;
  }
  bool is_kw(const char* s) const { return peek().kind == Token::Kind::Ident && peek().text == s; }
  const Token& take() { return toks_[p_ < toks_.size() - 1 ? p_++ : p_]; }
  void expect(const char* s) {
    if (!is_sym(s)) throw RuleError(peek().pos, std::string("expected '") + s + "', found " + describe(peek()));
    take();
  }
  static std::string describe(const Token& t) {
    if (t.kind == Token::Kind::End) return "end of input";
    return "'" + t.text + "'";
  }
  std::string ident(const char* what) {
    if (peek().kind != Token::Kind::Ident) {
      throw RuleError(peek().pos, std::string("expected ") + what + ", found " + describe(peek()));
    }
    return take().text;
  }

  std::vector<std::string> var_list() {
    std::vector<std::string> vars{ident("variable")};
    while (is_sym(",")) {
      take();
      vars.push_back(ident("variable"));
    }
    expect(".");
    return vars;
  }

  SurfaceRule parse_rule() {
    SurfaceRule r;
    r.pos = peek().pos;
    if (is_kw("forall")) {
      take();
      r.forall = var_list();
    }
    if (is_kw("false")) {
      take();
      r.constraint = true;
    } else {
      r.heads.push_back(head_atom());
      while (is_sym(",")) {
        take();
        r.heads.push_back(head_atom());
      }
    }
    if (is_sym("<-")) {
      take();
      r.body = disjunction();
    } else if (r.constraint) {
      throw RuleError(peek().pos, "constraint rule needs a body");
    }
    expect(".");
    return r;
  }

  HeadAtom head_atom() {
    HeadAtom h;
    h.pos = peek().pos;
    if (is_sym("^")) {
      take();
      h.mode = HeadAtom::Mode::Upsert;
    } else if (is_sym("-")) {
      take();
      h.mode = HeadAtom::Mode::Retract;
    }
    h.pred = ident("predicate name");
    if (is_sym("@")) throw RuleError(peek().pos, "stage decorations are not allowed in rule heads");
    if (is_sym("(")) {
      take();
      h.keys = args(")");
    } else if (is_sym("[")) {
      take();
      h.functional = true;
      h.keys = args("]");
      if (is_sym("=")) {
        take();
        h.values = value_list();
      } else if (h.mode != HeadAtom::Mode::Retract) {
        throw RuleError(peek().pos, "function head '" + h.pred + "' needs '= value'");
      }
    } else {
      throw RuleError(peek().pos, "expected '(' or '[' after '" + h.pred + "'");
    }
    if (h.mode == HeadAtom::Mode::Retract && !h.values.empty()) {
      throw RuleError(h.pos, "retraction head takes no value");
    }
    return h;
  }

  std::vector<Expr> value_list() {
    if (is_sym("(")) {
      // could be a parenthesized expression or a value tuple
      std::size_t save = p_;
      take();
      std::vector<Expr> vs = args(")");
      if (vs.size() > 1) return vs;
      p_ = save;
    }
    return {expr()};
  }

  std::vector<Expr> args(const char* close) {
    std::vector<Expr> out;
    if (is_sym(close)) {
      take();
      return out;
    }
    out.push_back(expr());
    while (is_sym(",")) {
      take();
      out.push_back(expr());
    }
    expect(close);
    return out;
  }

  std::vector<std::vector<Literal>> disjunction() {
    std::vector<std::vector<Literal>> d{conjunction()};
    while (is_sym(";")) {
      take();
      d.push_back(conjunction());
    }
    return d;
  }

  std::vector<Literal> conjunction() {
    if (is_kw("exists")) {
      Literal l;
      l.kind = Literal::Kind::Exists;
      l.pos = take().pos;
      l.vars = var_list();
      l.disjuncts.push_back(conjunction());
      return {l};
    }
    std::vector<Literal> c{literal()};
    while (is_sym(",")) {
      take();
      if (is_kw("exists")) {
        // the quantifier scopes over the rest of the conjunction
        c.push_back(conjunction().front());
        break;
      }
      c.push_back(literal());
    }
    return c;
  }

  bool paren_is_group() const {
    // '(' starts a nested body if it contains a ',' ';' or literal-level
    // operator at depth 1 before the matching ')'; otherwise it is an
    // arithmetic subexpression
    int depth = 0;
    for (std::size_t k = p_; k < toks_.size(); ++k) {
      const Token& t = toks_[k];
      if (t.kind == Token::Kind::End) return false;
      if (t.kind != Token::Kind::Sym) {
        if (depth == 1 && t.kind == Token::Kind::Ident && t.text == "exists") return true;
        continue;
      }
      if (t.text == "(" || t.text == "[") ++depth;
      else if (t.text == ")" || t.text == "]") {
        if (--depth == 0) {
          const Token& n = toks_[std::min(k + 1, toks_.size() - 1)];
          bool followed_by_op = n.kind == Token::Kind::Sym &&
                                (n.text == "+" || n.text == "-" || n.text == "*" || n.text == "=" ||
                                 n.text == "!=" || n.text == "<" || n.text == "<=" || n.text == ">" ||
                                 n.text == ">=");
          return !followed_by_op;
        }
      } else if (depth == 1 && (t.text == "," || t.text == ";" || t.text == "!")) {
        return true;
      } else if (depth == 1 && (t.text == "=" || t.text == "<" || t.text == ">" || t.text == "<=" ||
                                t.text == ">=" || t.text == "!=")) {
        return true;
      }
    }
    return false;
  }

  Literal literal() {
    Literal l;
    l.pos = peek().pos;
    if (is_sym("!")) {
      take();
      l.kind = Literal::Kind::Not;
      if (is_kw("exists")) {
        Literal q = conjunction().front();
        l.vars = q.vars;
        l.disjuncts = q.disjuncts;
      } else {
        l.disjuncts.push_back({literal()});
      }
      return l;
    }
    if (is_sym("(") && paren_is_group()) {
      take();
      l.kind = Literal::Kind::Group;
      l.disjuncts = disjunction();
      expect(")");
      return l;
    }
    Expr lhs = expr();
    static const char* cmps[] = {"=", "!=", "<", "<=", ">", ">="};
    for (const char* c : cmps) {
      if (is_sym(c)) {
        take();
        l.kind = Literal::Kind::Compare;
        l.op = c;
        l.lhs = std::move(lhs);
        if (l.op == "=" && l.lhs.kind == Expr::Kind::Func && is_sym("(")) {
          auto vs = value_list();
          if (vs.size() == 1) {
            l.rhs = std::move(vs[0]);
          } else {
            l.rhs.kind = Expr::Kind::Tuple;
            l.rhs.args = std::move(vs);
            l.rhs.pos = l.lhs.pos;
          }
        } else {
          l.rhs = expr();
        }
        return l;
      }
    }
    if (lhs.kind != Expr::Kind::Rel && lhs.kind != Expr::Kind::Func) {
      throw RuleError(l.pos, "expected an atom or a comparison");
    }
    l.kind = Literal::Kind::Atom;
    l.lhs = std::move(lhs);
    return l;
  }

  Expr expr() {
    Expr e = term();
    while (is_sym("+") || is_sym("-")) {
      Expr b;
      b.kind = Expr::Kind::Binary;
      b.pos = peek().pos;
      b.op = take().text[0];
      b.args.push_back(std::move(e));
      b.args.push_back(term());
      e = std::move(b);
    }
    return e;
  }

  Expr term() {
    Expr e = primary();
    while (is_sym("*")) {
      Expr b;
      b.kind = Expr::Kind::Binary;
      b.pos = peek().pos;
      b.op = take().text[0];
      b.args.push_back(std::move(e));
      b.args.push_back(primary());
      e = std::move(b);
    }
    return e;
  }

  Expr primary() {
    Expr e;
    e.pos = peek().pos;
    const Token& t = peek();
    if (t.kind == Token::Kind::Int) {
      take();
      e.kind = Expr::Kind::Const;
      e.value = Value(t.ival);
      return e;
    }
    if (is_sym("-") && peek(1).kind == Token::Kind::Int) {
      take();
      e.kind = Expr::Kind::Const;
      e.value = Value(-take().ival);
      return e;
    }
    if (t.kind == Token::Kind::String) {
      e.kind = Expr::Kind::Const;
      e.value = Value(take().text);
      return e;
    }
    if (is_sym("(")) {
      take();
      Expr inner = expr();
      expect(")");
      return inner;
    }
    if (t.kind != Token::Kind::Ident) throw RuleError(t.pos, "expected a term, found " + describe(t));
    std::string name = take().text;
    if (name == "true" || name == "false") {
      e.kind = Expr::Kind::Const;
      e.value = Value(name == "true");
      return e;
    }
    if (name == "_") {
      e.kind = Expr::Kind::Wildcard;
      e.name = "_";
      return e;
    }
    e.name = name;
    if (is_sym("@")) {
      take();
      std::string st = ident("stage");
      if (st == "start") e.stage = Stage::Start;
      else if (st == "end") e.stage = Stage::End;
      else throw RuleError(e.pos, "unknown stage '@" + st + "'");
    }
    if (is_sym("(")) {
      take();
      e.kind = Expr::Kind::Rel;
      e.args = args(")");
    } else if (is_sym("[")) {
      take();
      e.kind = Expr::Kind::Func;
      e.args = args("]");
    } else {
      if (e.stage != Stage::Default) throw RuleError(e.pos, "stage decoration on a variable");
      e.kind = Expr::Kind::Var;
    }
    return e;
  }

  std::vector<Token> toks_;
  std::size_t p_ = 0;
};

inline std::vector<SurfaceRule> parse_surface(const std::string& text) { return Parser(text).parse_all(); }

// ---------------------------------------------------------------------------
// Printer

namespace detail {
inline int prec(const Expr& e) {
  if (e.kind != Expr::Kind::Binary) return 3;
  return e.op == '*' ? 2 : 1;
}
inline const char* stage_suffix(Stage s) {
  return s == Stage::Start ? "@start" : s == Stage::End ? "@end" : "";
}
}  // namespace detail

inline void print_expr(std::ostream& os, const Expr& e);

inline void print_args(std::ostream& os, const std::vector<Expr>& a) {
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (i) os << ", ";
    print_expr(os, a[i]);
  }
}

inline void print_expr(std::ostream& os, const Expr& e) {
  switch (e.kind) {
    case Expr::Kind::Var: os << e.name; break;
    case Expr::Kind::Wildcard: os << '_'; break;
    case Expr::Kind::Const: os << e.value; break;
    case Expr::Kind::Func:
      os << e.name << detail::stage_suffix(e.stage) << '[';
      print_args(os, e.args);
      os << ']';
      break;
    case Expr::Kind::Rel:
      os << e.name << detail::stage_suffix(e.stage) << '(';
      print_args(os, e.args);
      os << ')';
      break;
    case Expr::Kind::Tuple:
      os << '(';
      print_args(os, e.args);
      os << ')';
      break;
    case Expr::Kind::Binary: {
      int p = detail::prec(e);
      bool pl = detail::prec(e.args[0]) < p;
      bool pr = detail::prec(e.args[1]) <= p;
      if (pl) os << '(';
      print_expr(os, e.args[0]);
      if (pl) os << ')';
      os << ' ' << e.op << ' ';
      if (pr) os << '(';
      print_expr(os, e.args[1]);
      if (pr) os << ')';
      break;
    }
  }
}

inline void print_disjunction(std::ostream& os, const std::vector<std::vector<Literal>>& d);

inline void print_literal(std::ostream& os, const Literal& l) {
  switch (l.kind) {
    case Literal::Kind::Atom: print_expr(os, l.lhs); break;
    case Literal::Kind::Compare:
      print_expr(os, l.lhs);
      os << ' ' << l.op << ' ';
      print_expr(os, l.rhs);
      break;
    case Literal::Kind::Not:
      os << '!';
      if (!l.vars.empty()) {
        os << "exists ";
        for (std::size_t i = 0; i < l.vars.size(); ++i) os << (i ? ", " : "") << l.vars[i];
        os << " . ";
        print_disjunction(os, l.disjuncts);
      } else if (l.disjuncts.size() == 1 && l.disjuncts[0].size() == 1 &&
                 l.disjuncts[0][0].kind != Literal::Kind::Group) {
        print_literal(os, l.disjuncts[0][0]);
      } else {
        os << '(';
        print_disjunction(os, l.disjuncts);
        os << ')';
      }
      break;
    case Literal::Kind::Exists:
      os << "exists ";
      for (std::size_t i = 0; i < l.vars.size(); ++i) os << (i ? ", " : "") << l.vars[i];
      os << " . ";
      print_disjunction(os, l.disjuncts);
      break;
    case Literal::Kind::Group:
      os << '(';
      print_disjunction(os, l.disjuncts);
      os << ')';
      break;
  }
}

inline void print_disjunction(std::ostream& os, const std::vector<std::vector<Literal>>& d) {
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (i) os << "; ";
    for (std::size_t j = 0; j < d[i].size(); ++j) {
      if (j) os << ", ";
      print_literal(os, d[i][j]);
    }
  }
}

inline void print_rule(std::ostream& os, const SurfaceRule& r) {
  if (!r.forall.empty()) {
    os << "forall ";
    for (std::size_t i = 0; i < r.forall.size(); ++i) os << (i ? ", " : "") << r.forall[i];
    os << " . ";
  }
  if (r.constraint) {
    os << "false";
  } else {
    for (std::size_t i = 0; i < r.heads.size(); ++i) {
      const auto& h = r.heads[i];
      if (i) os << ", ";
      if (h.mode == HeadAtom::Mode::Upsert) os << '^';
      if (h.mode == HeadAtom::Mode::Retract) os << '-';
      os << h.pred << (h.functional ? '[' : '(');
      print_args(os, h.keys);
      os << (h.functional ? ']' : ')');
      if (!h.values.empty()) {
        os << " = ";
        if (h.values.size() > 1) os << '(';
        print_args(os, h.values);
        if (h.values.size() > 1) os << ')';
      }
    }
  }
  if (!r.body.empty()) {
    os << " <- ";
    print_disjunction(os, r.body);
  }
  os << '.';
}

inline std::string print_rules(const std::vector<SurfaceRule>& rules) {
  std::ostringstream os;
  for (const auto& r : rules) {
    print_rule(os, r);
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Flat rules: bodies lowered to positive atoms, negated atoms, and primitives.

struct Term {
  bool is_var = false;
  std::string var;
  Value value;
  bool wildcard = false;  // variable introduced for `_`

  static Term variable(std::string v) { return {true, std::move(v), {}}; }
  static Term constant(Value c) { return {false, {}, std::move(c)}; }
  bool operator==(const Term& o) const { return is_var == o.is_var && (is_var ? var == o.var : value == o.value); }
};

inline std::ostream& operator<<(std::ostream& os, const Term& t) {
  if (t.is_var) return os << t.var;
  return os << t.value;
}

struct PredAtom {
  std::string pred;
  Stage stage = Stage::Default;
  bool functional = false;
  std::size_t key_arity = 0;  // args = keys ++ values
  std::vector<Term> args;
  bool negated = false;
  SourcePos pos;
};

struct PrimAtom {
  enum class Op : std::uint8_t { Add, Sub, Mul, Lt, Le, Gt, Ge, Eq, Ne };
  Op op;
  Term a, b;
  std::optional<Term> out;  // arithmetic only
  SourcePos pos;

  bool is_arith() const { return op == Op::Add || op == Op::Sub || op == Op::Mul; }
};

inline const char* op_text(PrimAtom::Op op) {
  switch (op) {
    case PrimAtom::Op::Add: return "+";
    case PrimAtom::Op::Sub: return "-";
    case PrimAtom::Op::Mul: return "*";
    case PrimAtom::Op::Lt: return "<";
    case PrimAtom::Op::Le: return "<=";
    case PrimAtom::Op::Gt: return ">";
    case PrimAtom::Op::Ge: return ">=";
    case PrimAtom::Op::Eq: return "=";
    case PrimAtom::Op::Ne: return "!=";
  }
  return "?";
}

struct FlatHead {
  HeadAtom::Mode mode = HeadAtom::Mode::Derive;
  std::string pred;
  bool functional = false;
  std::size_t key_arity = 0;
  std::vector<Term> args;
  SourcePos pos;
};

struct FlatRule {
  bool constraint = false;
  std::vector<FlatHead> heads;
  std::vector<PredAtom> atoms;  // positive and negated
  std::vector<PrimAtom> prims;
  SourcePos pos;
  std::string text;  // printed source of the originating rule
};

/// What a predicate name refers to while checking a rule set.
struct PredInfo {
  enum class Kind : std::uint8_t { Db, Param, Temp };
  Kind kind = Kind::Temp;
  PredId db_id = -1;
  bool functional = false;
  std::size_t key_arity = 0;
  std::size_t value_arity = 0;
  std::vector<std::optional<Type>> types;  // per column, when known
};

/// Name resolution for rule checking: stored predicates from the schema,
/// plus transaction parameters (relations supplied with the submission).
class Catalog {
 public:
  Catalog() = default;
  explicit Catalog(SchemaPtr schema) : schema_(std::move(schema)) {}

  void add_param(const std::string& name, std::size_t arity, std::vector<std::optional<Type>> types = {}) {
    PredInfo p;
    p.kind = PredInfo::Kind::Param;
    p.key_arity = arity;
    p.types = types.empty() ? std::vector<std::optional<Type>>(arity) : std::move(types);
    extra_[name] = std::move(p);
  }
  void add_temp(const std::string& name, PredInfo p) { extra_[name] = std::move(p); }

  const PredInfo* find(const std::string& name) const {
    auto it = extra_.find(name);
    if (it != extra_.end()) return &it->second;
    if (schema_) {
      if (const auto* sig = schema_->find(name)) {
        auto [c, _] = cache_.emplace(name, PredInfo{});
        PredInfo& p = c->second;
        p.kind = PredInfo::Kind::Db;
        p.db_id = sig->id;
        p.functional = !sig->is_relation();
        p.key_arity = sig->key_arity();
        p.value_arity = sig->value_arity();
        p.types.clear();
        for (auto t : sig->key_types) p.types.emplace_back(t);
        for (auto t : sig->value_types) p.types.emplace_back(t);
        return &p;
      }
    }
    return nullptr;
  }
  const SchemaPtr& schema() const { return schema_; }

 private:
  SchemaPtr schema_;
  std::map<std::string, PredInfo> extra_;
  mutable std::map<std::string, PredInfo> cache_;
};

namespace detail {

class Lowering {
 public:
  Lowering(const Catalog& cat, std::set<std::string> head_vars) : cat_(cat), reserved_(std::move(head_vars)) {}

  Term fresh() {
    std::string v;
    do {
      v = "_t" + std::to_string(counter_++);
    } while (reserved_.count(v));
    return Term::variable(v);
  }

  Term simple(const Expr& e, FlatRule& r) {
    switch (e.kind) {
      case Expr::Kind::Var: return Term::variable(e.name);
      case Expr::Kind::Wildcard: {
        Term t = fresh();
        t.wildcard = true;
        return t;
      }
      case Expr::Kind::Const: return Term::constant(e.value);
      case Expr::Kind::Func: {
        Term t = fresh();
        PredAtom a = func_atom(e, {t}, r);
        r.atoms.push_back(std::move(a));
        return t;
      }
      case Expr::Kind::Binary: {
        Term t = fresh();
        r.prims.push_back(arith(e, t, r));
        return t;
      }
      case Expr::Kind::Rel: throw RuleError(e.pos, "relation atom '" + e.name + "' used as a value");
      case Expr::Kind::Tuple: throw RuleError(e.pos, "tuple used as a single value");
    }
    throw RuleError(e.pos, "bad expression");
  }

  PrimAtom arith(const Expr& e, Term out, FlatRule& r) {
    PrimAtom p;
    p.pos = e.pos;
    p.op = e.op == '+' ? PrimAtom::Op::Add : e.op == '-' ? PrimAtom::Op::Sub : PrimAtom::Op::Mul;
    p.a = simple(e.args[0], r);
    p.b = simple(e.args[1], r);
    p.out = std::move(out);
    return p;
  }

  PredAtom rel_atom(const Expr& e, FlatRule& r) {
    const PredInfo* info = resolve(e.name, e.pos, e.stage);
    if (info->functional) {
      throw RuleError(e.pos, "'" + e.name + "' is a function; write " + e.name + "[keys] = value");
    }
    if (e.args.size() != info->key_arity) {
      throw RuleError(e.pos, "'" + e.name + "' expects " + std::to_string(info->key_arity) + " arguments, got " +
                                 std::to_string(e.args.size()));
    }
    PredAtom a;
    a.pred = e.name;
    a.stage = e.stage;
    a.pos = e.pos;
    a.key_arity = info->key_arity;
    for (const auto& x : e.args) a.args.push_back(simple(x, r));
    return a;
  }

  PredAtom func_atom(const Expr& e, std::vector<Term> values, FlatRule& r) {
    const PredInfo* info = resolve(e.name, e.pos, e.stage);
    if (!info->functional) {
      throw RuleError(e.pos, "'" + e.name + "' is a relation; write " + e.name + "(args)");
    }
    if (e.args.size() != info->key_arity) {
      throw RuleError(e.pos, "'" + e.name + "' expects " + std::to_string(info->key_arity) + " keys, got " +
                                 std::to_string(e.args.size()));
    }
    if (values.empty()) {
      for (std::size_t i = 0; i < info->value_arity; ++i) values.push_back(fresh());
    }
    if (values.size() != info->value_arity) {
      throw RuleError(e.pos, "'" + e.name + "' has " + std::to_string(info->value_arity) + " value columns, got " +
                                 std::to_string(values.size()));
    }
    PredAtom a;
    a.pred = e.name;
    a.stage = e.stage;
    a.functional = true;
    a.pos = e.pos;
    a.key_arity = info->key_arity;
    for (const auto& x : e.args) a.args.push_back(simple(x, r));
    for (auto& v : values) a.args.push_back(std::move(v));
    return a;
  }

  static bool is_simple(const Expr& e) {
    return e.kind == Expr::Kind::Var || e.kind == Expr::Kind::Const || e.kind == Expr::Kind::Wildcard;
  }

  std::vector<Term> value_terms(const Expr& e, FlatRule& r) {
    std::vector<Term> out;
    if (e.kind == Expr::Kind::Tuple) {
      for (const auto& x : e.args) out.push_back(simple(x, r));
    } else {
      out.push_back(simple(e, r));
    }
    return out;
  }

  /// Lowers one positive or negated literal into r.
  void literal(const Literal& l, FlatRule& r, bool negated) {
    switch (l.kind) {
      case Literal::Kind::Atom: {
        PredAtom a = l.lhs.kind == Expr::Kind::Rel ? rel_atom(l.lhs, r) : func_atom(l.lhs, {}, r);
        a.negated = negated;
        r.atoms.push_back(std::move(a));
        return;
      }
      case Literal::Kind::Compare: {
        if (l.op == "=") {
          const Expr* f = nullptr;
          const Expr* other = nullptr;
          if (l.lhs.kind == Expr::Kind::Func && (is_simple(l.rhs) || l.rhs.kind == Expr::Kind::Tuple)) {
            f = &l.lhs;
            other = &l.rhs;
          } else if (l.rhs.kind == Expr::Kind::Func && is_simple(l.lhs)) {
            f = &l.rhs;
            other = &l.lhs;
          }
          if (f) {
            PredAtom a = func_atom(*f, value_terms(*other, r), r);
            a.negated = negated;
            r.atoms.push_back(std::move(a));
            return;
          }
          if (!negated) {
            if (l.lhs.kind == Expr::Kind::Var && l.rhs.kind == Expr::Kind::Binary) {
              r.prims.push_back(arith(l.rhs, Term::variable(l.lhs.name), r));
              return;
            }
            if (l.rhs.kind == Expr::Kind::Var && l.lhs.kind == Expr::Kind::Binary) {
              r.prims.push_back(arith(l.lhs, Term::variable(l.rhs.name), r));
              return;
            }
          }
        }
        PrimAtom p;
        p.pos = l.pos;
        static const std::map<std::string, std::pair<PrimAtom::Op, PrimAtom::Op>> ops{
            {"=", {PrimAtom::Op::Eq, PrimAtom::Op::Ne}},  {"!=", {PrimAtom::Op::Ne, PrimAtom::Op::Eq}},
            {"<", {PrimAtom::Op::Lt, PrimAtom::Op::Ge}},  {"<=", {PrimAtom::Op::Le, PrimAtom::Op::Gt}},
            {">", {PrimAtom::Op::Gt, PrimAtom::Op::Le}},  {">=", {PrimAtom::Op::Ge, PrimAtom::Op::Lt}}};
        auto o = ops.at(l.op);
        p.op = negated ? o.second : o.first;
        p.a = simple(l.lhs, r);
        p.b = simple(l.rhs, r);
        if (negated && (l.lhs.kind == Expr::Kind::Func || l.rhs.kind == Expr::Kind::Func ||
                        l.lhs.kind == Expr::Kind::Binary || l.rhs.kind == Expr::Kind::Binary)) {
          throw RuleError(l.pos, "negated comparison must compare variables or constants");
        }
        r.prims.push_back(std::move(p));
        return;
      }
      case Literal::Kind::Not: {
        if (negated) throw RuleError(l.pos, "double negation is not supported");
        if (!l.vars.empty()) {
          throw RuleError(l.pos, "quantified negation is not supported: negation may only apply to a single atom "
                                 "whose variables are bound outside it");
        }
        if (l.disjuncts.size() != 1 || l.disjuncts[0].size() != 1) {
          throw RuleError(l.pos, "negation of a compound formula is not supported: negate a single atom");
        }
        const Literal& inner = l.disjuncts[0][0];
        if (inner.kind != Literal::Kind::Atom && inner.kind != Literal::Kind::Compare) {
          throw RuleError(l.pos, "negation of a compound formula is not supported: negate a single atom");
        }
        literal(inner, r, true);
        return;
      }
      case Literal::Kind::Exists:
      case Literal::Kind::Group: throw RuleError(l.pos, "internal: nested formula not flattened");
    }
  }

  const PredInfo* resolve(const std::string& name, const SourcePos& pos, Stage stage) {
    const PredInfo* info = cat_.find(name);
    if (!info) throw RuleError(pos, "unknown predicate '" + name + "'");
    if (stage != Stage::Default && info->kind != PredInfo::Kind::Db) {
      throw RuleError(pos, "stage decoration on '" + name + "', which is not a stored predicate");
    }
    return info;
  }

 private:
  const Catalog& cat_;
  std::set<std::string> reserved_;
  int counter_ = 0;
};

/// Distributes nested disjunctions; `exists` is scoping only.
inline void dnf(const std::vector<Literal>& conj, std::size_t i, std::vector<Literal>& acc,
                std::vector<std::vector<Literal>>& out, std::vector<std::string>& exists_vars) {
  if (i == conj.size()) {
    out.push_back(acc);
    return;
  }
  const Literal& l = conj[i];
  if (l.kind == Literal::Kind::Group || l.kind == Literal::Kind::Exists) {
    if (l.kind == Literal::Kind::Exists) exists_vars.insert(exists_vars.end(), l.vars.begin(), l.vars.end());
    for (const auto& d : l.disjuncts) {
      std::vector<std::vector<Literal>> sub;
      std::vector<Literal> empty;
      dnf(d, 0, empty, sub, exists_vars);
      for (auto& s : sub) {
        std::size_t n = acc.size();
        acc.insert(acc.end(), s.begin(), s.end());
        dnf(conj, i + 1, acc, out, exists_vars);
        acc.resize(n);
      }
    }
    return;
  }
  acc.push_back(l);
  dnf(conj, i + 1, acc, out, exists_vars);
  acc.pop_back();
}

inline void collect_vars(const Expr& e, std::set<std::string>& out) {
  if (e.kind == Expr::Kind::Var) out.insert(e.name);
  for (const auto& a : e.args) collect_vars(a, out);
}

inline void collect_vars(const Literal& l, std::set<std::string>& out) {
  collect_vars(l.lhs, out);
  collect_vars(l.rhs, out);
  out.insert(l.vars.begin(), l.vars.end());
  for (const auto& d : l.disjuncts) {
    for (const auto& x : d) collect_vars(x, out);
  }
}

}  // namespace detail

/// Registers rule heads that are neither stored predicates nor parameters as
/// transaction-local temporaries.
inline void declare_temporaries(const std::vector<SurfaceRule>& rules, Catalog& cat) {
  for (const auto& r : rules) {
    for (const auto& h : r.heads) {
      const PredInfo* existing = cat.find(h.pred);
      if (existing && existing->kind != PredInfo::Kind::Temp) continue;
      PredInfo p;
      p.kind = PredInfo::Kind::Temp;
      p.functional = h.functional;
      p.key_arity = h.keys.size();
      p.value_arity = h.values.size();
      if (existing && (existing->functional != p.functional || existing->key_arity != p.key_arity ||
                       existing->value_arity != p.value_arity)) {
        throw RuleError(h.pos, "inconsistent arity for '" + h.pred + "'");
      }
      p.types.assign(p.key_arity + p.value_arity, std::nullopt);
      cat.add_temp(h.pred, std::move(p));
    }
  }
}

/// Lowers surface rules into flat rules, one per disjunct, checking names,
/// arities, head modes, and range restriction.
inline std::vector<FlatRule> lower_rules(const std::vector<SurfaceRule>& rules, const Catalog& cat) {
  std::vector<FlatRule> out;
  for (const auto& sr : rules) {
    std::ostringstream txt;
    print_rule(txt, sr);
    std::set<std::string> head_vars;
    for (const auto& h : sr.heads) {
      for (const auto& k : h.keys) detail::collect_vars(k, head_vars);
      for (const auto& v : h.values) detail::collect_vars(v, head_vars);
    }
    std::set<std::string> all_vars = head_vars;
    for (const auto& d : sr.body) {
      for (const auto& l : d) detail::collect_vars(l, all_vars);
    }
    std::vector<std::vector<Literal>> conjs;
    std::vector<std::string> exists_vars;
    for (const auto& d : sr.body) {
      std::vector<Literal> acc;
      detail::dnf(d, 0, acc, conjs, exists_vars);
    }
    for (const auto& v : exists_vars) {
      if (head_vars.count(v)) {
        throw RuleError(sr.pos, "variable '" + v + "' is existentially quantified in the body but used in the head");
      }
    }
    if (sr.body.empty()) conjs.emplace_back();
    for (const auto& conj : conjs) {
      FlatRule r;
      r.pos = sr.pos;
      r.constraint = sr.constraint;
      r.text = txt.str();
      detail::Lowering low(cat, all_vars);
      for (const auto& l : conj) low.literal(l, r, false);
      for (const auto& h : sr.heads) {
        const PredInfo* info = cat.find(h.pred);
        if (!info) throw RuleError(h.pos, "unknown predicate '" + h.pred + "'");
        if (info->kind == PredInfo::Kind::Param) throw RuleError(h.pos, "cannot derive into parameter '" + h.pred + "'");
        if (info->kind == PredInfo::Kind::Db && h.mode == HeadAtom::Mode::Derive) {
          throw RuleError(h.pos, "stored predicate '" + h.pred + "' can only be changed with ^ (upsert) or - (retract)");
        }
        if (info->kind == PredInfo::Kind::Temp && h.mode != HeadAtom::Mode::Derive) {
          throw RuleError(h.pos, "'" + h.pred + "' is not a stored predicate; ^ and - apply only to stored predicates");
        }
        if (info->functional != h.functional) {
          throw RuleError(h.pos, "'" + h.pred + "' is a " + (info->functional ? "function" : "relation"));
        }
        if (h.keys.size() != info->key_arity ||
            (h.mode != HeadAtom::Mode::Retract && h.values.size() != info->value_arity)) {
          throw RuleError(h.pos, "arity mismatch in head '" + h.pred + "'");
        }
        FlatHead fh;
        fh.mode = h.mode;
        fh.pred = h.pred;
        fh.functional = h.functional;
        fh.key_arity = info->key_arity;
        fh.pos = h.pos;
        for (const auto& k : h.keys) fh.args.push_back(low.simple(k, r));
        for (const auto& v : h.values) fh.args.push_back(low.simple(v, r));
        r.heads.push_back(std::move(fh));
      }
      out.push_back(std::move(r));
    }
  }
  return out;
}

/// Parses and lowers rule text; temporaries are declared from rule heads.
inline std::vector<FlatRule> parse_rules(const std::string& text, Catalog cat) {
  auto surface = parse_surface(text);
  declare_temporaries(surface, cat);
  return lower_rules(surface, cat);
}

inline std::string to_string(const FlatRule& r) {
  std::ostringstream os;
  auto atom = [&](const std::string& pred, Stage st, bool functional, std::size_t ka, const std::vector<Term>& args) {
    os << pred << detail::stage_suffix(st) << (functional ? '[' : '(');
    for (std::size_t i = 0; i < ka; ++i) os << (i ? ", " : "") << args[i];
    os << (functional ? ']' : ')');
    if (functional && args.size() > ka) {
      os << " = ";
      if (args.size() - ka > 1) os << '(';
      for (std::size_t i = ka; i < args.size(); ++i) os << (i > ka ? ", " : "") << args[i];
      if (args.size() - ka > 1) os << ')';
    }
  };
  if (r.constraint) os << "false";
  for (std::size_t i = 0; i < r.heads.size(); ++i) {
    const auto& h = r.heads[i];
    if (i) os << ", ";
    if (h.mode == HeadAtom::Mode::Upsert) os << '^';
    if (h.mode == HeadAtom::Mode::Retract) os << '-';
    atom(h.pred, Stage::Default, h.functional, h.key_arity, h.args);
  }
  bool first = true;
  auto sep = [&] {
    os << (first ? " <- " : ", ");
    first = false;
  };
  for (const auto& a : r.atoms) {
    sep();
    if (a.negated) os << '!';
    atom(a.pred, a.stage, a.functional, a.key_arity, a.args);
  }
  for (const auto& p : r.prims) {
    sep();
    if (p.out) os << *p.out << " = " << p.a << ' ' << op_text(p.op) << ' ' << p.b;
    else os << p.a << ' ' << op_text(p.op) << ' ' << p.b;
  }
  os << '.';
  return os.str();
}

}  // namespace trepair
