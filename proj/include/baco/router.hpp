#pragma once

/**
 * Routing Strategies
 *
 * At every word boundary the decoder asks a router which model supplies the
 * next word. A strategy either fires its base-condition (route to the base
 * model) or falls through (route to the aligned model). Implemented rules:
 *
 *   Rand    base with probability gamma
 *   P       base iff the base model's top probability  < gamma   (gamma in [0,1])
 *   P-a     base iff the aligned model's top probability < gamma
 *   H       base iff the base model's entropy  > gamma           (gamma in [0,inf))
 *   H-a     base iff the aligned model's entropy > gamma
 *   PR      base iff maxP_base / maxP_aligned < gamma            (gamma in [0,1])
 *   HR      base iff H_base / H_aligned > gamma                  (gamma in [1,inf))
 *   Punc    aligned iff either candidate token is punctuation/formatting
 *   FC      aligned unless both candidates are content words or the base
 *           candidate is a function word
 *   Judge   base iff a judge model answers Yes to the next-word ambiguity
 *           prompt
 *
 * Composites chain base-conditions: the first child that fires routes to
 * base, otherwise aligned. Shorthand follows the rule that the later-named
 * strategy is evaluated first: "P-Punc:0.4" checks Punc's base-condition,
 * then P's with gamma 0.4.
 *
 * Threshold comparisons are strict; equality routes to the aligned model.
 * Probability/entropy predicates read the models' raw (pre-sampling)
 * distributions; candidate tokens are post-sampling draws. Entropy is in
 * nats.
 */

#include <cctype>
#include <cmath>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "backend.hpp"
#include "lexeme.hpp"

namespace baco::router {

enum class StrategyKind { rand, p, p_aligned, h, h_aligned, pr, hr, punc, fc, judge, composite };

inline const char* kind_label(StrategyKind k) {
  switch (k) {
    case StrategyKind::rand: return "Rand";
    case StrategyKind::p: return "P";
    case StrategyKind::p_aligned: return "P-a";
    case StrategyKind::h: return "H";
    case StrategyKind::h_aligned: return "H-a";
    case StrategyKind::pr: return "PR";
    case StrategyKind::hr: return "HR";
    case StrategyKind::punc: return "Punc";
    case StrategyKind::fc: return "FC";
    case StrategyKind::judge: return "Judge";
    case StrategyKind::composite: return "composite";
  }
  return "?";
}

inline bool kind_has_gamma(StrategyKind k) {
  switch (k) {
    case StrategyKind::rand:
    case StrategyKind::p:
    case StrategyKind::p_aligned:
    case StrategyKind::h:
    case StrategyKind::h_aligned:
    case StrategyKind::pr:
    case StrategyKind::hr:
      return true;
    default:
      return false;
  }
}

// ============================================================================
// StrategySpec
// ============================================================================

struct StrategySpec {
  StrategyKind kind = StrategyKind::rand;
  double gamma = 0.0;
  std::vector<StrategySpec> children;  // composite only, in evaluation order

  /// Gamma domain check; composites validate children.
  void validate() const {
    switch (kind) {
      case StrategyKind::rand:
      case StrategyKind::p:
      case StrategyKind::p_aligned:
      case StrategyKind::pr:
        if (gamma < 0.0 || gamma > 1.0)
          throw std::invalid_argument(std::string("strategy ") + kind_label(kind) +
                                      ": gamma must be in [0, 1]");
        break;
      case StrategyKind::h:
      case StrategyKind::h_aligned:
        if (gamma < 0.0)
          throw std::invalid_argument(std::string("strategy ") + kind_label(kind) +
                                      ": gamma must be >= 0");
        break;
      case StrategyKind::hr:
        if (gamma < 1.0)
          throw std::invalid_argument("strategy HR: gamma must be >= 1");
        break;
      case StrategyKind::composite:
        if (children.empty())
          throw std::invalid_argument("composite strategy: no children");
        for (const StrategySpec& c : children) {
          if (c.kind == StrategyKind::composite)
            throw std::invalid_argument("composite strategy: nesting not supported");
          c.validate();
        }
        break;
      default:
        break;
    }
  }

  /**
   * Parse shorthand like "P:0.4", "Rand:0.25", "Punc", "H-FC:2.0",
   * "P-Punc:0.4". Hyphenated names become composites, evaluated right to
   * left; a gamma applies to the one thresholded component.
   */
  static StrategySpec parse(std::string_view text) {
    std::string name(text);
    std::optional<double> gamma;
    if (const std::size_t colon = name.find(':'); colon != std::string::npos) {
      const std::string num = name.substr(colon + 1);
      try {
        std::size_t used = 0;
        gamma = std::stod(num, &used);
        if (used != num.size()) throw std::invalid_argument(num);
      } catch (const std::exception&) {
        throw std::invalid_argument("strategy '" + std::string(text) + "': bad gamma");
      }
      name.resize(colon);
    }

    // Split on '-', gluing the aligned-variant suffix back on (P-a, H-a).
    std::vector<std::string> parts;
    std::string cur;
    for (const char c : name + "-") {
      if (c == '-') {
        if (cur == "a" && !parts.empty() &&
            (parts.back() == "P" || parts.back() == "H" || parts.back() == "p" ||
             parts.back() == "h")) {
          parts.back() += "-a";
        } else if (!cur.empty()) {
          parts.push_back(cur);
        }
        cur.clear();
      } else {
        cur += c;
      }
    }
    if (parts.empty()) throw std::invalid_argument("strategy '" + std::string(text) + "': empty");

    std::vector<StrategySpec> kinds;
    int thresholded = 0;
    for (const std::string& part : parts) {
      StrategySpec s;
      s.kind = kind_from_name(part);
      if (s.kind == StrategyKind::composite)
        throw std::invalid_argument("strategy '" + std::string(text) + "': unknown rule '" +
                                    part + "'");
      if (kind_has_gamma(s.kind)) {
        ++thresholded;
        if (!gamma)
          throw std::invalid_argument("strategy '" + std::string(text) + "': missing gamma");
        s.gamma = *gamma;
      }
      kinds.push_back(s);
    }
    if (thresholded > 1)
      throw std::invalid_argument("strategy '" + std::string(text) +
                                  "': shorthand allows one thresholded rule");
    if (thresholded == 0 && gamma)
      throw std::invalid_argument("strategy '" + std::string(text) + "': gamma not applicable");

    StrategySpec spec;
    if (kinds.size() == 1) {
      spec = kinds.front();
    } else {
      spec.kind = StrategyKind::composite;
      spec.children.assign(kinds.rbegin(), kinds.rend());  // later-named runs first
    }
    spec.validate();
    return spec;
  }

  static StrategySpec from_json(const nlohmann::json& j) {
    if (j.is_string()) return parse(j.get<std::string>());
    StrategySpec spec;
    const std::string kind_name = j.at("kind").get<std::string>();
    if (kind_name == "composite") {
      spec.kind = StrategyKind::composite;
      for (const auto& c : j.at("children")) spec.children.push_back(from_json(c));
    } else {
      spec.kind = kind_from_name(kind_name);
      if (spec.kind == StrategyKind::composite)
        throw std::invalid_argument("strategy: unknown kind '" + kind_name + "'");
      if (kind_has_gamma(spec.kind)) spec.gamma = j.at("gamma").get<double>();
    }
    spec.validate();
    return spec;
  }

  nlohmann::json to_json() const {
    if (kind == StrategyKind::composite) {
      nlohmann::json arr = nlohmann::json::array();
      for (const StrategySpec& c : children) arr.push_back(c.to_json());
      return {{"kind", "composite"}, {"children", arr}};
    }
    nlohmann::json j = {{"kind", kind_label(kind)}};
    if (kind_has_gamma(kind)) j["gamma"] = gamma;
    return j;
  }

  /// Canonical shorthand; inverse of parse for everything parse accepts.
  std::string label() const {
    if (kind != StrategyKind::composite) {
      std::string s = kind_label(kind);
      if (kind_has_gamma(kind)) s += ":" + format_gamma(gamma);
      return s;
    }
    std::string name;
    std::optional<double> g;
    for (auto it = children.rbegin(); it != children.rend(); ++it) {
      if (!name.empty()) name += "-";
      name += kind_label(it->kind);
      if (kind_has_gamma(it->kind)) g = it->gamma;
    }
    if (g) name += ":" + format_gamma(*g);
    return name;
  }

  /// True if any rule inspects candidate token classes (Punc, FC).
  bool needs_token_classes() const {
    return any_kind([](StrategyKind k) {
      return k == StrategyKind::punc || k == StrategyKind::fc;
    });
  }

  /// True if any rule needs function/content classes, i.e. a lexicon and
  /// completed words (FC).
  bool needs_lexicon() const {
    return any_kind([](StrategyKind k) { return k == StrategyKind::fc; });
  }

  bool needs_judge() const {
    return any_kind([](StrategyKind k) { return k == StrategyKind::judge; });
  }

 private:
  template <typename Pred>
  bool any_kind(Pred pred) const {
    if (kind != StrategyKind::composite) return pred(kind);
    for (const StrategySpec& c : children)
      if (pred(c.kind)) return true;
    return false;
  }

  static std::string format_gamma(double g) {
    std::string s = std::to_string(g);
    while (s.size() > 1 && s.back() == '0') s.pop_back();
    if (!s.empty() && s.back() == '.') s.pop_back();
    return s;
  }

  static StrategyKind kind_from_name(std::string_view name) {
    std::string lower;
    for (const char c : name)
      lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower == "rand") return StrategyKind::rand;
    if (lower == "p") return StrategyKind::p;
    if (lower == "p-a" || lower == "pa") return StrategyKind::p_aligned;
    if (lower == "h") return StrategyKind::h;
    if (lower == "h-a" || lower == "ha") return StrategyKind::h_aligned;
    if (lower == "pr") return StrategyKind::pr;
    if (lower == "hr") return StrategyKind::hr;
    if (lower == "punc") return StrategyKind::punc;
    if (lower == "fc") return StrategyKind::fc;
    if (lower == "judge") return StrategyKind::judge;
    return StrategyKind::composite;  // sentinel for "unknown"
  }
};

// ============================================================================
// Decision inputs and result
// ============================================================================

enum class Route { base, aligned };

inline const char* to_string(Route r) { return r == Route::base ? "base" : "aligned"; }

/// Everything a routing step may inspect. Probabilities/entropies come from
/// the raw distributions; classes describe the post-sampling candidates.
struct DecisionInputs {
  double base_max_prob = 0.0;
  double base_entropy = 0.0;
  double aligned_max_prob = 0.0;
  double aligned_entropy = 0.0;
  lexeme::TokenClass base_class = lexeme::TokenClass::word_start;
  lexeme::TokenClass aligned_class = lexeme::TokenClass::word_start;
  std::string_view user_prompt;     // judge only
  std::string_view generated_text;  // judge only
};

struct RoutingDecision {
  Route target = Route::aligned;
  std::string reason;      // label of the rule that fired, or the fallback cause
  DecisionInputs inputs;   // snapshot for traces and tests
};

// ============================================================================
// Judge protocol
// ============================================================================

/**
 * Decision prompt sent to the judge model: in-context demonstrations of the
 * next-word ambiguity question, then the live prompt/response pair.
 */
inline std::string judge_decision_prompt(std::string_view user_prompt,
                                         std::string_view response_so_far) {
  static const std::string demonstrations =
      "We want to determine whether the next word in a text can be predicted with high "
      "confidence based on the context provided. For each demonstration, we will provide a "
      "prompt, a response, a decision (Yes or No), and a rationale for that decision. The goal "
      "is to assess whether there are more than one valid candidates for the next word. Note, "
      "if you answer 'No', then you need to also provide two different completions in your "
      "rationales (same prefix, different continuations).\n"
      "\n"
      "Demonstration 1\n"
      "Prompt: Write a short story.\n"
      "Response: Here is a short story: In\n"
      "Decision: Yes\n"
      "Rationale: The subject of writing is a story, and a story plot needs novelty. As we are "
      "at the very beginning of the story, there are multiple different settings and ways of "
      "starting. For example, the next word here can be time, location, characters, etc.\n"
      "\n"
      "Demonstration 2\n"
      "Prompt: Write a short story.\n"
      "Response: Here is a short story: \n"
      "Decision: Yes\n"
      "Rationale: The response provided is an acknowledgment rather than a continuation. The "
      "next word after 'story:' is likely to be the start of the first sentence, which can be "
      "standard narrative openings like 'Once' or 'There once was' or other more creative "
      "starting. All of them valid continuations possible.\n"
      "\n"
      "Demonstration 3\n"
      "Prompt: Write a short adventure story.\n"
      "Response: Abe and Bob used to explore the forest behind their house. Abe would lead the "
      "way, followed by\n"
      "Decision: No\n"
      "Rationale: To maintain narrative clarity and coherence, the next word here is likely to "
      "be Bob. Since Bob is the only other person mentioned.\n"
      "\n"
      "Demonstration 4\n"
      "Prompt: Write a short story.\n"
      "Response: Here is a short story: Lily was a shy and\n"
      "Decision: Yes\n"
      "Rationale: The next word after 'shy and' has flexibility in describing Lily's "
      "personality. Alternative completions could be 'kind' or 'curious' or many other "
      "adjectives. Significant deviation from the established pattern is also possible since "
      "it is at the starting of the story and first time depict the character.\n"
      "\n"
      "Demonstration 5\n"
      "Prompt: Write a short story.\n"
      "Response: Alice and Bob decide to quit their jobs and start working on their business "
      "plan. They come up \n"
      "Decision: No\n"
      "Rationale: Here, the next word is likely 'with' according to the grammar of the "
      "phrase.\n"
      "\n"
      "Demonstration 6\n"
      "Prompt: Write a short story that has three main characters: Alice, Bob, and Mallory.\n"
      "Response: It was a crisp autumn morning in the small village. Alice, Bob, and \n"
      "Decision: No\n"
      "Rationale: Here, the next word is likely Mallory. Because the prompt constrains the "
      "character names.\n"
      "\n"
      "Demonstration 7\n"
      "Prompt: Write a short story.\n"
      "Response: Here is a short story: Every afternoon, Lily would\n"
      "Decision: Yes\n"
      "Rationale: The next word after 'would' has flexibility in describing the activity. "
      "Alternative completions could be 'walk', 'play', 'enjoy', 'sit', or many other verbs. "
      "Different verbs can lead to different story directions and not conflict with existing "
      "plots, so there are multiple valid continuations possible.\n"
      "\n"
      "Demonstration 8\n"
      "Prompt: Where is the capital of France?\n"
      "Response: The capital of France is \n"
      "Decision: No\n"
      "Rationale: The prompt is asking a question with a ground-truth answer, so very little "
      "diversity is allowed here for the next word. The next word is likely to be Paris, "
      "providing factual information.\n"
      "\n"
      "Demonstration 9\n"
      "Prompt: Write a short biography for a made-up historical figure.\n"
      "Response: Here is a short biography for a made-up historical figure: Name:\n"
      "Decision: Yes\n"
      "Rationale: When generating fictional information, there can be multiple valid choices.\n"
      "\n"
      "Demonstration 10\n"
      "Prompt: Name one UFC fighter.\n"
      "Response: One UFC fighter is\n"
      "Decision: Yes\n"
      "Rationale: There are multiple valid answers here. Here, any UFC fighter's name is "
      "valid.\n"
      "\n"
      "Demonstration 11\n"
      "Prompt: Simulate a six-sided die and give me the result of one roll.\n"
      "Response: The result of the roll is\n"
      "Decision: Yes\n"
      "Rationale: The prompt asks for information with randomness or uncertainty. Here, any "
      "integers from 1 to 6 are valid.\n"
      "\n";

  std::string prompt = demonstrations;
  prompt += "Prompt: ";
  prompt += user_prompt;
  prompt += "\nResponse: ";
  prompt += response_so_far;
  prompt +=
      "\nDo you think there are multiple (more than one is enough) valid candidates for the "
      "next word? Please provide a rationale and respond with 'Yes' or 'No'.";
  return prompt;
}

/// First standalone yes/no word in the reply, case-insensitive; nullopt when
/// the reply commits to neither.
inline std::optional<bool> parse_judge_reply(std::string_view reply) {
  std::string word;
  const auto flush = [&]() -> std::optional<bool> {
    if (word == "yes") return true;
    if (word == "no") return false;
    word.clear();
    return std::nullopt;
  };
  for (const char c : reply) {
    if (std::isalpha(static_cast<unsigned char>(c))) {
      word += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    } else if (!word.empty()) {
      if (const auto v = flush()) return v;
    }
  }
  return flush();
}

// ============================================================================
// decide
// ============================================================================

namespace detail {

struct ChildOutcome {
  bool fired = false;
  bool degenerate = false;    // ratio rule with zero denominator
  bool judge_failed = false;  // transport failure or unparseable reply
};

inline bool is_content(lexeme::TokenClass c) {
  return c == lexeme::TokenClass::content_word_start;
}

inline ChildOutcome eval_rule(const StrategySpec& rule, const DecisionInputs& in, double u,
                              ScoringBackends* judge) {
  ChildOutcome out;
  switch (rule.kind) {
    case StrategyKind::rand:
      out.fired = u < rule.gamma;
      break;
    case StrategyKind::p:
      out.fired = in.base_max_prob < rule.gamma;
      break;
    case StrategyKind::p_aligned:
      out.fired = in.aligned_max_prob < rule.gamma;
      break;
    case StrategyKind::h:
      out.fired = in.base_entropy > rule.gamma;
      break;
    case StrategyKind::h_aligned:
      out.fired = in.aligned_entropy > rule.gamma;
      break;
    case StrategyKind::pr:
      if (in.aligned_max_prob <= 0.0) {
        out.degenerate = true;
      } else {
        out.fired = in.base_max_prob / in.aligned_max_prob < rule.gamma;
      }
      break;
    case StrategyKind::hr:
      if (in.aligned_entropy <= 0.0) {
        out.degenerate = true;
      } else {
        out.fired = in.base_entropy / in.aligned_entropy > rule.gamma;
      }
      break;
    case StrategyKind::punc:
      out.fired = in.base_class != lexeme::TokenClass::punct_or_format &&
                  in.aligned_class != lexeme::TokenClass::punct_or_format;
      break;
    case StrategyKind::fc:
      if (in.base_class == lexeme::TokenClass::word_start ||
          in.aligned_class == lexeme::TokenClass::word_start)
        throw std::runtime_error("FC routing requires resolved lexical classes");
      out.fired = in.base_class == lexeme::TokenClass::function_word_start ||
                  (is_content(in.base_class) && is_content(in.aligned_class));
      break;
    case StrategyKind::judge: {
      if (judge == nullptr) {
        out.judge_failed = true;
        break;
      }
      try {
        const std::string reply =
            judge->judge_reply(judge_decision_prompt(in.user_prompt, in.generated_text));
        if (const auto verdict = parse_judge_reply(reply)) {
          out.fired = *verdict;
        } else {
          out.judge_failed = true;
        }
      } catch (const std::exception&) {
        out.judge_failed = true;
      }
      break;
    }
    case StrategyKind::composite:
      throw std::logic_error("eval_rule: composite is not a rule");
  }
  return out;
}

}  // namespace detail

/**
 * One routing decision. `u` is the decision lane's uniform draw (consumed
 * only by Rand); `judge` may be null unless the strategy needs it. Judge
 * transport failures and unparseable replies degrade to aligned with reason
 * "judge_unavailable" rather than aborting the decode.
 */
inline RoutingDecision decide(const StrategySpec& spec, const DecisionInputs& in, double u,
                              ScoringBackends* judge = nullptr) {
  spec.validate();
  const std::vector<StrategySpec> singleton{spec};
  const std::vector<StrategySpec>& rules =
      spec.kind == StrategyKind::composite ? spec.children : singleton;

  RoutingDecision decision;
  decision.inputs = in;

  bool any_degenerate = false;
  bool any_judge_failed = false;
  for (const StrategySpec& rule : rules) {
    const detail::ChildOutcome out = detail::eval_rule(rule, in, u, judge);
    any_degenerate |= out.degenerate;
    any_judge_failed |= out.judge_failed;
    if (out.fired) {
      decision.target = Route::base;
      decision.reason = kind_label(rule.kind);
      return decision;
    }
  }

  decision.target = Route::aligned;
  if (any_judge_failed) {
    decision.reason = "judge_unavailable";
  } else if (any_degenerate) {
    decision.reason = "degenerate_ratio";
  } else if (rules.size() == 1) {
    decision.reason = kind_label(rules.front().kind);
  } else {
    decision.reason = "fallback_aligned";
  }
  return decision;
}

}  // namespace baco::router
