#include "vigil/corpus.hpp"

#include "vigil/csv.hpp"
#include "vigil/error.hpp"
#include "vigil/prng.hpp"

#include <algorithm>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>

namespace vigil {
namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_tags(std::string_view cell) {
    std::vector<std::string> tags;
    std::size_t start = 0;
    while (start <= cell.size()) {
        const auto end = std::min(cell.find(';', start), cell.size());
        if (auto t = trim(cell.substr(start, end - start)); !t.empty()) tags.push_back(std::move(t));
        start = end + 1;
    }
    return tags;
}

bool is_blank_row(const csv::Row& row) {
    return std::all_of(row.begin(), row.end(), [](const std::string& f) { return trim(f).empty(); });
}

}  // namespace

PromptCorpus parse_corpus(std::string_view csv_text, std::string source) {
    if (csv_text.substr(0, 3) == "\xEF\xBB\xBF") csv_text.remove_prefix(3);
    const auto rows = csv::parse(csv_text);
    if (rows.empty()) throw InputError(source + ": missing header row");

    std::map<std::string, std::size_t> column;
    for (std::size_t i = 0; i < rows[0].size(); ++i) column.emplace(trim(rows[0][i]), i);
    for (const char* required : {"id", "text", "stratum"}) {
        if (!column.contains(required)) {
            throw InputError(source + ": missing required column '" + required + "'");
        }
    }
    const auto tags_col = column.contains("tags") ? std::optional(column.at("tags")) : std::nullopt;
    auto cell = [](const csv::Row& row, std::size_t i) -> std::string_view {
        return i < row.size() ? std::string_view(row[i]) : std::string_view{};
    };

    PromptCorpus corpus;
    corpus.source_path = std::move(source);
    std::set<std::string> seen;
    for (std::size_t r = 1; r < rows.size(); ++r) {
        const auto& row = rows[r];
        if (is_blank_row(row)) continue;
        Prompt p;
        p.id = trim(cell(row, column.at("id")));
        p.text = std::string(cell(row, column.at("text")));
        p.stratum = trim(cell(row, column.at("stratum")));
        if (p.stratum.empty()) p.stratum = kDefaultStratum;
        if (tags_col) p.tags = split_tags(cell(row, *tags_col));
        const std::string where = corpus.source_path + ": row " + std::to_string(r + 1);
        if (p.id.empty()) throw InputError(where + ": empty id");
        if (trim(p.text).empty()) throw InputError(where + ": empty text for id '" + p.id + "'");
        if (!seen.insert(p.id).second) throw InputError(where + ": duplicate id '" + p.id + "'");
        corpus.prompts.push_back(std::move(p));
    }
    if (corpus.prompts.empty()) throw InputError(corpus.source_path + ": empty corpus");
    return corpus;
}

PromptCorpus load_corpus(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot read corpus file: " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_corpus(buf.str(), path.string());
}

std::map<std::string, std::size_t> allocate_strata(const std::map<std::string, std::size_t>& sizes,
                                                   std::size_t k) {
    std::size_t n = 0;
    for (const auto& [_, c] : sizes) n += c;
    std::map<std::string, std::size_t> quota;
    if (n == 0) return quota;

    struct Remainder {
        std::size_t value;
        const std::string* name;
    };
    std::vector<Remainder> remainders;
    std::size_t assigned = 0;
    for (const auto& [name, count] : sizes) {
        // k * count fits comfortably: both are corpus-sized.
        quota[name] = k * count / n;
        assigned += quota[name];
        remainders.push_back({k * count % n, &name});
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const Remainder& a, const Remainder& b) { return a.value > b.value; });
    for (std::size_t i = 0; assigned < k && i < remainders.size(); ++i, ++assigned) {
        ++quota[*remainders[i].name];
    }
    return quota;
}

PromptCorpus stratified_sample(const PromptCorpus& corpus, const SamplingConfig& cfg) {
    if (cfg.k == 0) throw std::invalid_argument("stratified_sample: k must be >= 1");
    if (cfg.k > corpus.size()) {
        throw std::invalid_argument("stratified_sample: k = " + std::to_string(cfg.k) +
                                    " exceeds corpus size " + std::to_string(corpus.size()));
    }
    std::map<std::string, std::vector<const Prompt*>> by_stratum;
    for (const auto& p : corpus.prompts) by_stratum[p.stratum].push_back(&p);

    std::map<std::string, std::size_t> sizes;
    for (const auto& [s, members] : by_stratum) sizes[s] = members.size();
    const auto quota = allocate_strata(sizes, cfg.k);

    PromptCorpus out;
    out.source_path = corpus.source_path;
    for (auto& [stratum, members] : by_stratum) {
        std::sort(members.begin(), members.end(),
                  [](const Prompt* a, const Prompt* b) { return a->id < b->id; });
        SplitMix64 rng(mix_seed(cfg.seed, fnv1a64(stratum)));
        fisher_yates(std::span(members), rng);
        std::vector<const Prompt*> chosen(members.begin(),
                                          members.begin() + static_cast<std::ptrdiff_t>(quota.at(stratum)));
        std::sort(chosen.begin(), chosen.end(),
                  [](const Prompt* a, const Prompt* b) { return a->id < b->id; });
        for (const Prompt* p : chosen) out.prompts.push_back(*p);
    }
    return out;
}

std::map<std::string, std::size_t> corpus_stats(const PromptCorpus& corpus) {
    std::map<std::string, std::size_t> hist;
    for (const auto& p : corpus.prompts) ++hist[p.stratum];
    return hist;
}

}  // namespace vigil
