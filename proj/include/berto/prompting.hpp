#pragma once

#include <array>
#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "berto/data.hpp"

namespace berto {

enum class Preference { HighServiceQuality, ServiceQuality, Neutral, PowerSavings, HighPowerSavings };

/// Ordered from service-quality focus to power-savings focus.
inline constexpr std::array<Preference, 5> kAllPreferences = {
    Preference::HighServiceQuality, Preference::ServiceQuality, Preference::Neutral,
    Preference::PowerSavings, Preference::HighPowerSavings};

enum class Orientation { Direct, TableConsistent };

std::string_view phrase(Preference p);

/// Exact match against the five canonical phrases; nullopt otherwise.
std::optional<Preference> preference_from_phrase(std::string_view phrase);

/// Throws std::invalid_argument listing the valid phrases.
Preference parse_preference(std::string_view phrase);

std::string_view orientation_name(Orientation o);
Orientation parse_orientation(std::string_view name);

/// Literal operator-table q under Direct; its reciprocal under TableConsistent.
double q_for_preference(Preference p, Orientation o);

std::string render_prompt(const PredictionSample& sample, std::optional<Preference> pref = std::nullopt);

class TokenizeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TokenSequence {
  std::vector<int> ids;
  std::vector<std::uint8_t> attention_mask;
  int mask_index = -1;

  int real_length() const;
};

class Vocabulary {
 public:
  static constexpr int kPad = 0;
  static constexpr int kCls = 1;
  static constexpr int kSep = 2;
  static constexpr int kMask = 3;
  static constexpr int kVersion = 1;

  /// The closed vocabulary covering every rendered prompt.
  static Vocabulary standard();

  explicit Vocabulary(std::vector<std::string> tokens);

  int size() const { return static_cast<int>(tokens_.size()); }
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  std::optional<int> id(std::string_view token) const;
  const std::vector<std::string>& tokens() const { return tokens_; }

  /// FNV-1a over the serialized table; stored in checkpoints.
  std::uint64_t hash() const;

  void write(std::ostream& out) const;
  static Vocabulary read(std::istream& in);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

inline constexpr int kDefaultSeqLen = 96;

TokenSequence tokenize(std::string_view prompt, const Vocabulary& vocab, int length = kDefaultSeqLen);

/// Inverse of tokenize for rendered prompts: numeric character runs are
/// rejoined, with a number closed one digit after its decimal point.
std::string detokenize(const TokenSequence& tokens, const Vocabulary& vocab);

}  // namespace berto
