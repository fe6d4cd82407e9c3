#pragma once

// Independent reference implementations used to check the library. Nothing
// here calls the code under test except for data types and I/O.

#include "vigil/agentsim.hpp"
#include "vigil/corpus.hpp"
#include "vigil/vulnscan.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace oracle {

std::filesystem::path source_path(const std::string& rel);
std::string read_file(const std::filesystem::path& p);

// Largest-remainder allocation with exact integer remainders k*n_s mod n.
std::map<std::string, std::size_t> allocate(const std::map<std::string, std::size_t>& sizes, std::size_t k);

// Stratified sample ids in (stratum, id) order, with its own SplitMix64.
std::vector<std::string> sample_ids(const std::vector<vigil::Prompt>& prompts, std::size_t k, std::uint64_t seed);

struct Ols {
    double slope;
    double intercept;
    double r_squared;
};
// Closed form through centred sums in long double.
Ols ols(const std::vector<double>& x, const std::vector<double>& y);

struct Anova {
    double f;
    double df_between;
    double df_within;
    double p;
};
// Two-pass sums of squares; p from Boost's F distribution.
Anova anova(const std::vector<std::vector<double>>& groups);

std::uint64_t severity_score(const std::vector<vigil::VulnFinding>& findings);

bool violates(const vigil::ConstraintSet& c, const vigil::AgentAction& a);

// Recount of every counter straight from the record fields.
vigil::AgentCounts recount(const std::vector<vigil::TraceRecord>& trace);

}  // namespace oracle
