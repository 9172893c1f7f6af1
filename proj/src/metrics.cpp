#include "vqa/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <unordered_map>

#include "vqa/assets.hpp"
#include "vqa/cot.hpp"
#include "vqa/text.hpp"

namespace vqa {

namespace {

constexpr std::array<std::string_view, 3> kArticles = {"a", "an", "the"};
constexpr std::array<std::string_view, 9> kPrepositions = {"of", "in", "on", "at", "to", "for", "with", "by", "from"};
constexpr std::array<std::string_view, 11> kNumberWords = {"zero", "one", "two", "three", "four", "five",
                                                          "six",  "seven", "eight", "nine", "ten"};

// Irregular forms and words the suffix rules would mangle. Every value must
// be a fixed point of lemmatize().
const std::unordered_map<std::string_view, std::string_view>& lemma_table() {
    static const std::unordered_map<std::string_view, std::string_view> table = {
        // irregular plurals
        {"men", "man"}, {"women", "woman"}, {"children", "child"}, {"people", "person"},
        {"feet", "foot"}, {"teeth", "tooth"}, {"mice", "mouse"}, {"geese", "goose"},
        {"oxen", "ox"}, {"cacti", "cactus"}, {"knives", "knife"}, {"wives", "wife"},
        {"lives", "life"}, {"leaves", "leaf"}, {"loaves", "loaf"}, {"halves", "half"},
        {"shelves", "shelf"}, {"wolves", "wolf"}, {"calves", "calf"}, {"scarves", "scarf"},
        {"thieves", "thief"}, {"buses", "bus"}, {"tomatoes", "tomato"}, {"potatoes", "potato"},
        {"heroes", "hero"}, {"mangoes", "mango"}, {"movies", "movie"}, {"cookies", "cookie"},
        {"brownies", "brownie"}, {"zombies", "zombie"}, {"goalies", "goalie"}, {"selfies", "selfie"},
        // words that only look plural
        {"news", "news"}, {"christmas", "christmas"}, {"texas", "texas"}, {"canvas", "canvas"},
        {"atlas", "atlas"}, {"always", "always"}, {"series", "series"}, {"species", "species"},
        {"lens", "lens"}, {"bananas", "banana"},
        // common verb inflections
        {"does", "do"}, {"did", "do"}, {"done", "do"}, {"doing", "do"},
        {"goes", "go"}, {"went", "go"}, {"gone", "go"}, {"going", "go"},
        {"has", "have"}, {"had", "have"}, {"having", "have"},
        {"sitting", "sit"}, {"sat", "sit"}, {"standing", "stand"}, {"stood", "stand"},
        {"running", "run"}, {"ran", "run"}, {"walking", "walk"}, {"walked", "walk"},
        {"eating", "eat"}, {"ate", "eat"}, {"eaten", "eat"}, {"playing", "play"}, {"played", "play"},
        {"riding", "ride"}, {"rode", "ride"}, {"ridden", "ride"}, {"flying", "fly"}, {"flew", "fly"},
        {"surfing", "surf"}, {"surfed", "surf"}, {"skiing", "ski"}, {"skied", "ski"},
        {"skateboarding", "skateboard"}, {"snowboarding", "snowboard"}, {"swimming", "swim"},
        {"swam", "swim"}, {"sleeping", "sleep"}, {"slept", "sleep"}, {"laying", "lay"},
        {"lying", "lie"}, {"holding", "hold"}, {"held", "hold"}, {"wearing", "wear"}, {"wore", "wear"},
        {"worn", "wear"}, {"looking", "look"}, {"drinking", "drink"}, {"drank", "drink"},
        {"talking", "talk"}, {"working", "work"}, {"worked", "work"}, {"reading", "read"},
        {"cooking", "cook"}, {"cooked", "cook"}, {"racing", "race"}, {"raced", "race"},
        {"smiling", "smile"}, {"waiting", "wait"}, {"parked", "park"}, {"parking", "park"},
        {"made", "make"}, {"making", "make"}, {"driving", "drive"}, {"drove", "drive"},
        {"throwing", "throw"}, {"threw", "throw"}, {"catching", "catch"}, {"caught", "catch"},
        {"hitting", "hit"}, {"cutting", "cut"}, {"sliced", "slice"}, {"pulling", "pull"},
        {"grazing", "graze"}, {"jumping", "jump"}, {"jumped", "jump"}, {"shopping", "shop"},
        {"dining", "dine"}, {"camping", "camp"}, {"fishing", "fish"}, {"hiking", "hike"},
        {"boating", "boat"}, {"sailing", "sail"}, {"texting", "text"}, {"posing", "pose"},
    };
    return table;
}

bool is_lower_alpha(std::string_view w) {
    return !w.empty() && std::all_of(w.begin(), w.end(), [](char c) { return c >= 'a' && c <= 'z'; });
}

std::string strip_suffix(std::string_view w) {
    std::string s(w);
    auto ends = [&](std::string_view suf) { return s.size() > suf.size() && s.ends_with(suf); };
    if (s.size() > 4 && ends("ies")) return s.substr(0, s.size() - 3) + "y";
    if (ends("sses") || ends("ches") || ends("shes") || ends("xes") || ends("zzes"))
        return s.substr(0, s.size() - 2);
    if (s.size() > 3 && s.ends_with('s') && !ends("ss") && !ends("us") && !ends("is"))
        return s.substr(0, s.size() - 1);
    return s;
}

bool contains(std::span<const std::string_view> set, std::string_view w) {
    return std::find(set.begin(), set.end(), w) != set.end();
}

// Lowercases and removes punctuation. Periods between digits survive
// ("2.5"), commas between digits vanish ("1,000"), apostrophes vanish
// ("bailey's"), everything else becomes a space.
std::string strip_punctuation(std::string_view in) {
    std::string out;
    out.reserve(in.size());
    auto digit = [&](std::size_t i) { return i < in.size() && std::isdigit(static_cast<unsigned char>(in[i])); };
    for (std::size_t i = 0; i < in.size(); ++i) {
        auto c = static_cast<unsigned char>(in[i]);
        if (!std::ispunct(c)) {
            out += static_cast<char>(std::tolower(c));
            continue;
        }
        const bool between_digits = i > 0 && digit(i - 1) && digit(i + 1);
        if (c == '.' && between_digits) {
            out += '.';
        } else if ((c == ',' && between_digits) || c == '\'') {
            // dropped without a break
        } else {
            out += ' ';
        }
    }
    return out;
}

}  // namespace

std::span<const std::string_view> dropped_prepositions() {
    return kPrepositions;
}

std::string lemmatize(std::string_view word) {
    if (!is_lower_alpha(word)) return std::string(word);
    const auto& table = lemma_table();
    if (auto it = table.find(word); it != table.end()) return std::string(it->second);
    auto stem = strip_suffix(word);
    if (auto it = table.find(stem); it != table.end()) return std::string(it->second);
    return stem;
}

std::string normalize(std::string_view input) {
    std::vector<std::string> kept;
    for (auto& token : text::split_whitespace(strip_punctuation(input))) {
        auto lemma = lemmatize(token);
        if (contains(kArticles, lemma) || contains(kPrepositions, lemma)) continue;
        auto num = std::find(kNumberWords.begin(), kNumberWords.end(), lemma);
        if (num != kNumberWords.end()) lemma = std::to_string(num - kNumberWords.begin());
        kept.push_back(std::move(lemma));
    }
    return text::join(kept, " ");
}

std::string build_parse_prompt(std::string_view question, std::string_view verbose_answer) {
    auto q = text::single_line(question);
    auto a = text::single_line(verbose_answer);
    if (q.empty() || a.empty()) throw Error(ErrorKind::Precondition, "parse prompt needs a question and an answer");
    std::string out(assets::parse_prompt());
    out += "Input: " + q + " " + a + " Short answer:";
    return out;
}

std::string_view to_string(ParseOutcome outcome) {
    switch (outcome) {
        case ParseOutcome::Bypassed: return "bypassed";
        case ParseOutcome::Parsed: return "parsed";
        case ParseOutcome::Fallback: return "ParseFallback";
    }
    return "bypassed";
}

ParsedAnswer llm_parse(std::string_view question, std::string_view verbose_answer, Backend& backend) {
    auto verbose = text::trim(verbose_answer);
    if (text::word_count(verbose) <= kParseBypassWords) return {verbose, ParseOutcome::Bypassed, {}};

    auto fallback = [&](const std::string& why) {
        return ParsedAnswer{extract_final_answer(verbose), ParseOutcome::Fallback, "ParseFallback: " + why};
    };
    BackendRequest req;
    try {
        req.prompt = build_parse_prompt(question, verbose);
    } catch (const Error& e) {
        return fallback(e.what());
    }
    req.gen = preset("parse");
    req.purpose = Purpose::Parse;
    try {
        auto resp = backend.complete(req);
        if (resp.texts.empty()) return fallback("backend returned no completions");
        auto line = text::first_line(resp.texts.front());
        if (line.empty()) return fallback("backend returned an empty completion");
        return {line, ParseOutcome::Parsed, {}};
    } catch (const Error& e) {
        return fallback(e.what());
    }
}

double vqa_accuracy(std::string_view candidate, std::span<const std::string> refs) {
    if (refs.empty()) throw Error(ErrorKind::Precondition, "vqa_accuracy needs at least one reference");
    const auto cand = normalize(candidate);
    std::size_t matches = 0;
    for (const auto& r : refs)
        if (normalize(r) == cand) ++matches;
    return std::min(static_cast<double>(matches) / 3.0, 1.0);
}

int binary_accuracy(std::string_view candidate, std::string_view ref) {
    return normalize(candidate) == normalize(ref) ? 1 : 0;
}

std::string_view to_string(YesNo v) {
    switch (v) {
        case YesNo::Yes: return "yes";
        case YesNo::No: return "no";
        case YesNo::Unknown: return "unknown";
    }
    return "unknown";
}

YesNo yes_no_of(std::string_view input) {
    auto tokens = text::split_whitespace(normalize(input));
    if (tokens.empty()) return YesNo::Unknown;
    if (tokens.front() == "yes") return YesNo::Yes;
    if (tokens.front() == "no") return YesNo::No;
    return YesNo::Unknown;
}

void validate(const WinogroundQuad& quad) {
    auto yes = std::count_if(quad.items.begin(), quad.items.end(), [](const auto& i) { return i.expected_yes; });
    if (yes != 2)
        throw Error(ErrorKind::Precondition,
                    "winoground quad " + quad.sample_id + " must expect exactly two yes answers");
}

WinogroundScore winoground_group_score(const WinogroundQuad& quad, std::span<const std::string> answers) {
    validate(quad);
    if (answers.size() != quad.items.size())
        throw Error(ErrorKind::Precondition, "winoground scoring needs exactly four answers");
    WinogroundScore out;
    out.score = 1;
    for (std::size_t i = 0; i < answers.size(); ++i) {
        auto v = yes_no_of(answers[i]);
        if (v == YesNo::Unknown) ++out.non_binary;
        out.correct[i] = v != YesNo::Unknown && (v == YesNo::Yes) == quad.items[i].expected_yes;
        if (!out.correct[i]) out.score = 0;
    }
    return out;
}

namespace {

std::vector<std::string> rouge_tokens(std::string_view s) {
    return text::split_whitespace(text::to_lower(s));
}

RougeScore f_measure(double overlap, double cand_total, double ref_total) {
    if (overlap <= 0.0 || cand_total <= 0.0 || ref_total <= 0.0) return {};
    RougeScore r;
    r.precision = overlap / cand_total;
    r.recall = overlap / ref_total;
    r.f1 = 2.0 * r.precision * r.recall / (r.precision + r.recall);
    return r;
}

}  // namespace

RougeScore rouge_n_score(std::string_view candidate, std::string_view reference, int n) {
    if (n != 1 && n != 2) throw Error(ErrorKind::Precondition, "rouge_n supports n = 1 or 2");
    auto grams = [n](const std::vector<std::string>& toks) {
        std::map<std::vector<std::string>, int> counts;
        for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i)
            ++counts[std::vector<std::string>(toks.begin() + static_cast<std::ptrdiff_t>(i),
                                              toks.begin() + static_cast<std::ptrdiff_t>(i) + n)];
        return counts;
    };
    auto c = grams(rouge_tokens(candidate));
    auto r = grams(rouge_tokens(reference));
    double c_total = 0, r_total = 0, overlap = 0;
    for (const auto& [g, k] : c) c_total += k;
    for (const auto& [g, k] : r) {
        r_total += k;
        if (auto it = c.find(g); it != c.end()) overlap += std::min(k, it->second);
    }
    return f_measure(overlap, c_total, r_total);
}

RougeScore rouge_l_score(std::string_view candidate, std::string_view reference) {
    auto c = rouge_tokens(candidate);
    auto r = rouge_tokens(reference);
    if (c.empty() || r.empty()) return {};
    std::vector<std::size_t> prev(r.size() + 1, 0), cur(r.size() + 1, 0);
    for (std::size_t i = 1; i <= c.size(); ++i) {
        for (std::size_t j = 1; j <= r.size(); ++j)
            cur[j] = c[i - 1] == r[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        std::swap(prev, cur);
    }
    return f_measure(static_cast<double>(prev[r.size()]), static_cast<double>(c.size()),
                     static_cast<double>(r.size()));
}

}  // namespace vqa
