#include "mleng/core.hpp"

#include <algorithm>
#include <numeric>

#include "util.hpp"

namespace mleng {

const char* to_string(Direction d) {
    return d == Direction::Maximize ? "maximize" : "minimize";
}

Direction direction_from_string(const std::string& s) {
    std::string lower;
    lower.reserve(s.size());
    for (char c : s) lower += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (lower == "maximize" || lower == "max") return Direction::Maximize;
    if (lower == "minimize" || lower == "min") return Direction::Minimize;
    throw ConfigError("unknown direction: '" + s + "' (expected maximize or minimize)");
}

const char* to_string(Origin o) {
    switch (o) {
        case Origin::Candidate: return "candidate";
        case Origin::Merged: return "merged";
        case Origin::Refined: return "refined";
        case Origin::Ensembled: return "ensembled";
        case Origin::Finalized: return "finalized";
    }
    return "candidate";
}

Origin origin_from_string(const std::string& s) {
    if (s == "candidate") return Origin::Candidate;
    if (s == "merged") return Origin::Merged;
    if (s == "refined") return Origin::Refined;
    if (s == "ensembled") return Origin::Ensembled;
    if (s == "finalized") return Origin::Finalized;
    throw ConfigError("unknown solution origin: '" + s + "'");
}

std::uint64_t content_hash(const std::string& text) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

std::string short_hash(const std::string& text) {
    static const char* hex = "0123456789abcdef";
    std::uint64_t h = content_hash(text);
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = hex[h & 0xf];
        h >>= 4;
    }
    return out;
}

Solution make_solution(std::string script, Origin origin, std::vector<std::string> lineage) {
    Solution s;
    s.script = std::move(script);
    s.origin = origin;
    s.lineage = std::move(lineage);
    std::string key = s.script;
    key += '\x1f';
    key += to_string(s.origin);
    for (const auto& parent : s.lineage) {
        key += '\x1f';
        key += parent;
    }
    s.id = short_hash(key);
    return s;
}

void RunConfig::validate() const {
    auto positive = [](int v, const char* name) {
        if (v < 1) throw ConfigError(std::string(name) + " must be >= 1");
    };
    positive(num_candidates, "num_candidates");
    positive(outer_steps, "outer_steps");
    positive(inner_steps, "inner_steps");
    positive(parallel_solutions, "parallel_solutions");
    positive(ensemble_rounds, "ensemble_rounds");
    if (max_debug_rounds < 0) throw ConfigError("max_debug_rounds must be >= 0");
    if (per_exec_timeout.count() <= 0) throw ConfigError("per_exec_timeout must be positive");
    if (per_exec_timeout > total_budget)
        throw ConfigError("per_exec_timeout must not exceed total_budget");
}

Ordering compare_scores(const ScoreRecord& a, const ScoreRecord& b) {
    if (a.direction != b.direction)
        throw DirectionMismatch("cannot compare a " + std::string(to_string(a.direction)) +
                                " score with a " + to_string(b.direction) + " score");
    if (a.value == b.value) return Ordering::Equal;
    bool a_better = a.direction == Direction::Maximize ? a.value > b.value : a.value < b.value;
    return a_better ? Ordering::ABetter : Ordering::BBetter;
}

bool improves_or_ties(const ScoreRecord& candidate, const ScoreRecord& incumbent) {
    return compare_scores(candidate, incumbent) != Ordering::BBetter;
}

std::vector<std::size_t> sort_candidates(const std::vector<Solution>& solutions) {
    for (const auto& s : solutions)
        if (!s.score)
            throw UnscoredSolution("sort_candidates requires every solution to carry a score");
    for (std::size_t i = 1; i < solutions.size(); ++i)
        if (solutions[i].score->direction != solutions[0].score->direction)
            throw DirectionMismatch("sort_candidates requires a single score direction");

    std::vector<std::size_t> perm(solutions.size());
    std::iota(perm.begin(), perm.end(), 0);
    std::stable_sort(perm.begin(), perm.end(), [&](std::size_t a, std::size_t b) {
        return compare_scores(*solutions[a].score, *solutions[b].score) == Ordering::ABetter;
    });
    return perm;
}

namespace {

// Normalized view of a text for whitespace-insensitive matching:
//   - \r\n and \r become \n
//   - runs of spaces/tabs collapse to one space, or vanish entirely when
//     they sit at the end of a line (trailing whitespace)
// start_of/end_of map each normalized char back to its original byte span.
struct NormalizedText {
    std::string text;
    std::vector<std::size_t> start_of;
    std::vector<std::size_t> end_of; // exclusive
};

NormalizedText normalize(const std::string& s) {
    NormalizedText out;
    out.text.reserve(s.size());
    std::size_t i = 0;
    const std::size_t n = s.size();
    while (i < n) {
        char c = s[i];
        if (c == '\r') {
            std::size_t end = (i + 1 < n && s[i + 1] == '\n') ? i + 2 : i + 1;
            out.text += '\n';
            out.start_of.push_back(i);
            out.end_of.push_back(end);
            i = end;
        } else if (c == ' ' || c == '\t') {
            std::size_t j = i;
            while (j < n && (s[j] == ' ' || s[j] == '\t')) ++j;
            bool trailing = j == n || s[j] == '\n' || s[j] == '\r';
            if (!trailing) {
                out.text += ' ';
                out.start_of.push_back(i);
                out.end_of.push_back(j);
            }
            i = j;
        } else {
            out.text += c;
            out.start_of.push_back(i);
            out.end_of.push_back(i + 1);
            i = i + 1;
        }
    }
    return out;
}

std::string normalized_pattern(const std::string& block) {
    NormalizedText n = normalize(block);
    return detail::trim(n.text);
}

std::vector<std::size_t> find_all(const std::string& haystack, const std::string& needle) {
    std::vector<std::size_t> hits;
    if (needle.empty()) return hits;
    std::size_t pos = haystack.find(needle);
    while (pos != std::string::npos) {
        hits.push_back(pos);
        pos = haystack.find(needle, pos + 1);
    }
    return hits;
}

} // namespace

BlockSpan locate_block(const std::string& script, const std::string& block) {
    if (block.empty()) throw BlockNotFound("block text is empty");

    auto exact = find_all(script, block);
    if (exact.size() == 1) return {exact[0], block.size()};
    if (exact.size() > 1)
        throw AmbiguousBlock("block occurs " + std::to_string(exact.size()) +
                             " times in the script");

    // Whitespace-normalized fallback; the replaced span stays in original bytes.
    std::string pattern = normalized_pattern(block);
    if (pattern.empty()) throw BlockNotFound("block text is whitespace only");
    NormalizedText norm = normalize(script);
    auto hits = find_all(norm.text, pattern);
    if (hits.empty())
        throw BlockNotFound("block not found in script (exact and whitespace-normalized)");
    if (hits.size() > 1)
        throw AmbiguousBlock("block matches " + std::to_string(hits.size()) +
                             " whitespace-normalized spans");
    std::size_t first = hits[0];
    std::size_t last = first + pattern.size() - 1;
    std::size_t begin = norm.start_of[first];
    std::size_t end = norm.end_of[last];
    return {begin, end - begin};
}

Solution replace_block(const Solution& s, const CodeBlock& old, const CodeBlock& replacement) {
    BlockSpan span = locate_block(s.script, old.text);
    std::string script = s.script.substr(0, span.offset) + replacement.text +
                         s.script.substr(span.offset + span.length);
    return make_solution(std::move(script), s.origin, {s.id});
}

} // namespace mleng
