#include "pooltest/formula.hpp"

#include <cctype>

namespace pooltest {

namespace {

struct Token {
  enum Kind { name, number_one, tilde, plus, bar, slash, lparen, rparen, star, colon, minus, zero, end } kind;
  std::string text;
  std::size_t offset;
};

std::vector<Token> tokenize(const std::string& text) {
  std::vector<Token> tokens;
  std::size_t i = 0;
  while (i < text.size()) {
    const char c = text[i];
    if (std::isspace(static_cast<unsigned char>(c))) {
      ++i;
      continue;
    }
    if (std::isalpha(static_cast<unsigned char>(c)) || c == '_' || c == '.') {
      std::size_t j = i;
      while (j < text.size() && (std::isalnum(static_cast<unsigned char>(text[j])) || text[j] == '_' ||
                                 text[j] == '.'))
        ++j;
      tokens.push_back({Token::name, text.substr(i, j - i), i});
      i = j;
      continue;
    }
    switch (c) {
      case '1': tokens.push_back({Token::number_one, "1", i}); break;
      case '0': tokens.push_back({Token::zero, "0", i}); break;
      case '~': tokens.push_back({Token::tilde, "~", i}); break;
      case '+': tokens.push_back({Token::plus, "+", i}); break;
      case '|': tokens.push_back({Token::bar, "|", i}); break;
      case '/': tokens.push_back({Token::slash, "/", i}); break;
      case '(': tokens.push_back({Token::lparen, "(", i}); break;
      case ')': tokens.push_back({Token::rparen, ")", i}); break;
      case '*': tokens.push_back({Token::star, "*", i}); break;
      case ':': tokens.push_back({Token::colon, ":", i}); break;
      case '-': tokens.push_back({Token::minus, "-", i}); break;
      default:
        throw FormulaError(std::string("unexpected character '") + c + "'", i);
    }
    ++i;
  }
  tokens.push_back({Token::end, "", text.size()});
  return tokens;
}

class Parser {
 public:
  explicit Parser(const std::string& text) : tokens_(tokenize(text)) {}

  ModelFormula parse(const std::string& text) {
    ModelFormula f;
    f.text = text;
    f.response = expect_name("response column name");
    expect(Token::tilde, "'~'");
    parse_term(f);
    while (peek().kind == Token::plus) {
      advance();
      parse_term(f);
    }
    if (peek().kind != Token::end) unsupported(peek());
    return f;
  }

 private:
  const Token& peek() const { return tokens_[pos_]; }
  const Token& advance() { return tokens_[pos_++]; }

  void expect(Token::Kind kind, const std::string& what) {
    if (peek().kind != kind) throw FormulaError("expected " + what, peek().offset);
    advance();
  }

  std::string expect_name(const std::string& what) {
    if (peek().kind != Token::name) throw FormulaError("expected " + what, peek().offset);
    return advance().text;
  }

  [[noreturn]] void unsupported(const Token& tok) {
    if (tok.kind == Token::star)
      throw FormulaError("interaction terms 'a*b' are not supported", tok.offset);
    if (tok.kind == Token::colon)
      throw FormulaError("interaction terms 'a:b' are not supported", tok.offset);
    if (tok.kind == Token::minus || tok.kind == Token::zero)
      throw FormulaError("'-' / '0' terms (intercept removal, offsets) are not supported", tok.offset);
    throw FormulaError("unexpected token '" + tok.text + "'", tok.offset);
  }

  void parse_term(ModelFormula& f) {
    const Token& tok = peek();
    if (tok.kind == Token::name) {
      f.fixed_terms.push_back(advance().text);
      if (peek().kind == Token::star || peek().kind == Token::colon) unsupported(peek());
      return;
    }
    if (tok.kind == Token::number_one) {
      advance();  // explicit intercept; it is implicit anyway
      return;
    }
    if (tok.kind == Token::lparen) {
      advance();
      parse_random_term(f);
      return;
    }
    unsupported(tok);
  }

  void parse_random_term(ModelFormula& f) {
    expect(Token::number_one, "'1' at the start of a random-effect term");
    std::string slope;
    if (peek().kind == Token::plus) {
      advance();
      slope = expect_name("slope covariate after '1 +'");
    }
    expect(Token::bar, "'|'");
    std::vector<std::string> path;
    path.push_back(expect_name("grouping factor"));
    while (peek().kind == Token::slash) {
      advance();
      path.push_back(expect_name("grouping factor"));
    }
    expect(Token::rparen, "')'");

    // (1|A/B) expands to (1|A) + (1|A:B).
    std::vector<std::string> prefix;
    for (const std::string& level : path) {
      prefix.push_back(level);
      ModelFormula::RandomTerm term;
      term.slope = slope;
      term.group_columns = prefix;
      std::string group;
      for (const std::string& g : prefix) {
        if (!group.empty()) group += ':';
        group += g;
      }
      term.display = "(1" + (slope.empty() ? "" : " + " + slope) + " | " + group + ")";
      f.random_terms.push_back(std::move(term));
    }
  }

  std::vector<Token> tokens_;
  std::size_t pos_ = 0;
};

}  // namespace

ModelFormula parse_formula(const std::string& text) { return Parser(text).parse(text); }

}  // namespace pooltest
