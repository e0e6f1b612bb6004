#include "berto/prompting.hpp"

#include <cstdio>
#include <sstream>

namespace berto {

namespace {

constexpr std::array<std::string_view, 5> kPhrases = {
    "Focus highly on service quality", "Focus on service quality", "No specific focus",
    "Focus on power savings", "Focus highly on power savings"};

// Operator-table q per preference, same order as kAllPreferences.
constexpr std::array<double, 5> kTableQ = {0.1, 0.5, 1.0, 5.0, 10.0};

std::string number(double v, int decimals) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
  std::string s(buf);
  if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
  return s;
}

bool is_numeric_char(char c) { return (c >= '0' && c <= '9') || c == '.' || c == '-' || c == ':'; }

}  // namespace

std::string_view phrase(Preference p) { return kPhrases[static_cast<std::size_t>(p)]; }

std::optional<Preference> preference_from_phrase(std::string_view text) {
  for (auto p : kAllPreferences)
    if (phrase(p) == text) return p;
  return std::nullopt;
}

Preference parse_preference(std::string_view text) {
  if (auto p = preference_from_phrase(text)) return *p;
  std::string msg = "unknown preference '" + std::string(text) + "'; valid:";
  for (auto p : kAllPreferences) msg += " \"" + std::string(phrase(p)) + "\"";
  throw std::invalid_argument(msg);
}

std::string_view orientation_name(Orientation o) {
  return o == Orientation::Direct ? "direct" : "table_consistent";
}

Orientation parse_orientation(std::string_view name) {
  if (name == "direct") return Orientation::Direct;
  if (name == "table_consistent") return Orientation::TableConsistent;
  throw std::invalid_argument("unknown orientation '" + std::string(name) + "' (direct | table_consistent)");
}

double q_for_preference(Preference p, Orientation o) {
  const double q = kTableQ[static_cast<std::size_t>(p)];
  return o == Orientation::Direct ? q : 1.0 / q;
}

std::string render_prompt(const PredictionSample& sample, std::optional<Preference> pref) {
  std::string out = "cell " + std::to_string(sample.cell_id) + " ; time " + std::to_string(sample.tod_bucket) + " ; past";
  for (double v : sample.history) out += " " + number(v, 1);
  out += " ; mean " + number(sample.mean, 1);
  out += " ; dev " + number(sample.deviation, 1);
  out += " ; next [MASK]";
  if (pref) out += " ; goal " + std::string(phrase(*pref));
  return out;
}

int TokenSequence::real_length() const {
  int n = 0;
  for (auto m : attention_mask) n += m;
  return n;
}

Vocabulary Vocabulary::standard() {
  std::vector<std::string> t = {"[PAD]", "[CLS]", "[SEP]", "[MASK]", ";",    "cell",    "time",     "past",
                                "mean",  "dev",   "next",  "goal",   "No",   "specific", "focus", "Focus",
                                "on",    "highly", "service", "quality", "power", "savings"};
  for (char c = '0'; c <= '9'; ++c) t.emplace_back(1, c);
  t.emplace_back(".");
  t.emplace_back("-");
  t.emplace_back(":");
  return Vocabulary(std::move(t));
}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  if (tokens_.size() < 4 || tokens_[kPad] != "[PAD]" || tokens_[kCls] != "[CLS]" || tokens_[kSep] != "[SEP]" ||
      tokens_[kMask] != "[MASK]")
    throw std::invalid_argument("vocabulary must start with [PAD] [CLS] [SEP] [MASK]");
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second)
      throw std::invalid_argument("duplicate vocabulary token '" + tokens_[i] + "'");
  }
}

std::optional<int> Vocabulary::id(std::string_view token) const {
  const auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

std::uint64_t Vocabulary::hash() const {
  std::ostringstream os;
  write(os);
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : os.str()) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

void Vocabulary::write(std::ostream& out) const {
  out << "version\t" << kVersion << '\n';
  for (std::size_t i = 0; i < tokens_.size(); ++i) out << i << '\t' << tokens_[i] << '\n';
}

Vocabulary Vocabulary::read(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line.rfind("version\t", 0) != 0)
    throw std::invalid_argument("vocabulary: missing version line");
  if (std::stoi(line.substr(8)) != kVersion) throw std::invalid_argument("vocabulary: unsupported version");
  std::vector<std::string> tokens;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw std::invalid_argument("vocabulary: malformed line '" + line + "'");
    if (std::stoul(line.substr(0, tab)) != tokens.size())
      throw std::invalid_argument("vocabulary: ids must be dense and ordered");
    tokens.push_back(line.substr(tab + 1));
  }
  return Vocabulary(std::move(tokens));
}

TokenSequence tokenize(std::string_view prompt, const Vocabulary& vocab, int length) {
  std::vector<int> body;
  std::istringstream words{std::string(prompt)};
  std::string w;
  while (words >> w) {
    if (auto id = vocab.id(w)) {
      body.push_back(*id);
      continue;
    }
    bool numeric = true;
    for (char c : w) numeric = numeric && is_numeric_char(c);
    if (!numeric) throw TokenizeError("out-of-vocabulary token '" + w + "'");
    for (char c : w) {
      const auto id = vocab.id(std::string_view(&c, 1));
      if (!id) throw TokenizeError("out-of-vocabulary character '" + std::string(1, c) + "'");
      body.push_back(*id);
    }
  }
  if (static_cast<int>(body.size()) > length - 2)
    throw TokenizeError("prompt needs " + std::to_string(body.size() + 2) + " tokens, sequence length is " +
                        std::to_string(length));

  TokenSequence seq;
  seq.ids.assign(static_cast<std::size_t>(length), Vocabulary::kPad);
  seq.attention_mask.assign(static_cast<std::size_t>(length), 0);
  seq.ids[0] = Vocabulary::kCls;
  for (std::size_t i = 0; i < body.size(); ++i) seq.ids[i + 1] = body[i];
  seq.ids[body.size() + 1] = Vocabulary::kSep;
  for (std::size_t i = 0; i < body.size() + 2; ++i) seq.attention_mask[i] = 1;
  int masks = 0;
  for (int i = 0; i < length; ++i) {
    if (seq.ids[static_cast<std::size_t>(i)] == Vocabulary::kMask) {
      seq.mask_index = i;
      ++masks;
    }
  }
  if (masks != 1) throw TokenizeError("prompt must contain exactly one [MASK], found " + std::to_string(masks));
  return seq;
}

std::string detokenize(const TokenSequence& tokens, const Vocabulary& vocab) {
  std::string out;
  bool in_number = false;
  int digits_after_point = -1;
  for (std::size_t i = 0; i < tokens.ids.size(); ++i) {
    if (!tokens.attention_mask[i]) continue;
    const int id = tokens.ids[i];
    if (id == Vocabulary::kCls || id == Vocabulary::kSep) continue;
    const std::string& tok = vocab.token(id);
    const bool numeric = tok.size() == 1 && is_numeric_char(tok[0]);
    if (numeric && in_number && digits_after_point != 1) {
      out += tok;
    } else {
      if (!out.empty()) out += ' ';
      out += tok;
      digits_after_point = -1;
    }
    in_number = numeric;
    if (numeric) {
      if (tok == ".")
        digits_after_point = 0;
      else if (digits_after_point >= 0)
        ++digits_after_point;
    }
  }
  return out;
}

}  // namespace berto
