#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace vigil {

struct Prompt {
    std::string id;
    std::string text;
    std::string stratum;
    std::vector<std::string> tags;

    bool operator==(const Prompt&) const = default;
};

struct PromptCorpus {
    std::vector<Prompt> prompts;
    std::string source_path;

    std::size_t size() const noexcept { return prompts.size(); }
};

struct SamplingConfig {
    std::size_t k = 0;
    std::uint64_t seed = 42;
};

inline constexpr const char* kDefaultStratum = "medium";

// Columns: id, text, stratum (required header names), tags (optional,
// semicolon separated). Blank stratum cells become "medium". Extra columns
// are ignored. Throws InputError on unreadable file, missing column,
// duplicate or empty id, empty text or a corpus with no data rows.
PromptCorpus load_corpus(const std::filesystem::path& path);
PromptCorpus parse_corpus(std::string_view csv_text, std::string source = "<memory>");

// Per-stratum quotas: floor(k * n_s / n), then the k - sum(floors) leftover
// units go to the strata with the largest remainders (ties: stratum name
// ascending).
std::map<std::string, std::size_t> allocate_strata(const std::map<std::string, std::size_t>& sizes,
                                                   std::size_t k);

// Proportional stratified sample. Each stratum's members are ordered by id,
// shuffled with SplitMix64(mix_seed(seed, fnv1a64(stratum))) via Fisher-Yates,
// and the first `quota` are kept. Output is sorted by (stratum, id).
// Throws std::invalid_argument if k == 0 or k > corpus size.
PromptCorpus stratified_sample(const PromptCorpus& corpus, const SamplingConfig& cfg);

std::map<std::string, std::size_t> corpus_stats(const PromptCorpus& corpus);

}  // namespace vigil
