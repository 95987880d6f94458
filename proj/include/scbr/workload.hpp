#pragma once

#include "scbr/model.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace scbr::workload {

using Rng = std::mt19937_64;

class UnknownWorkload : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DatasetError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Distribution { Uniform, ZipfOnSymbol, ZipfOnAll };

std::string_view to_string(Distribution d) noexcept;

/// Share of subscriptions (in percent) carrying a given number of equality predicates.
struct MixRow {
    double percent;
    int equalities;
};

struct WorkloadSpec {
    std::string name;
    std::vector<MixRow> mix;
    int multiplier = 1;
    Distribution distribution = Distribution::Uniform;
    std::uint64_t seed = 1;
};

/// The nine workload names in table order.
const std::vector<std::string> &workload_names();

/// Throws UnknownWorkload.
WorkloadSpec workload_spec(std::string_view name, std::uint64_t seed = 1);

/// Numeric quote attribute before the _i suffix is applied.
struct AttributeDomain {
    std::string name;
    double lo;
    double hi;
    /// Values are multiples of this step.
    double grid;
    bool optional;
};

inline constexpr double kOptionalPresence = 0.5;
inline constexpr std::size_t kSymbolPool = 500;
inline constexpr std::size_t kPayloadBytes = 128;

const std::vector<AttributeDomain> &quote_domains();
/// The fixed pool of ticker symbols.
const std::vector<std::string> &symbol_pool();

/// "price" for multiplier 1, "price_1".."price_w" otherwise.
std::string attribute_name(std::string_view base, int quote, int multiplier);

/// Largest magnitude every numeric attribute of the spec can take, by full name.
std::vector<std::pair<std::string, double>> attribute_magnitudes(const WorkloadSpec &spec);

std::vector<Publication> gen_publications(const WorkloadSpec &spec, std::size_t n);

/// Requires a non-empty publication sample; subscription values are drawn
/// from it so that matches occur. Subscriptions get ids s0.. and clients c0...
std::vector<Subscription> gen_subscriptions(const WorkloadSpec &spec, std::size_t n,
                                            const std::vector<Publication> &pubs);

/// Zipf over ranks 1..n with exponent s, sampled by inverting the CDF.
class ZipfSampler {
public:
    explicit ZipfSampler(std::size_t n, double s = 1.0);

    /// Rank in [1, n].
    std::size_t operator()(Rng &rng) const;
    double probability(std::size_t rank) const;
    std::size_t size() const noexcept { return cdf_.size(); }

private:
    std::vector<double> cdf_;
};

std::size_t zipf_sample(double s, std::size_t n, Rng &rng);

/// Uniform double in [0, 1) from the top 53 bits; stable across standard libraries.
double unit_uniform(Rng &rng);
/// Uniform integer in [lo, hi].
std::int64_t uniform_int(Rng &rng, std::int64_t lo, std::int64_t hi);

// Dataset files: one JSON header line {"workload","seed","kind"}, then one
// object per line carrying the canonical text.

struct DatasetInfo {
    std::string workload;
    std::uint64_t seed = 0;
    std::string kind; // "subs" or "pubs"
};

void write_subscriptions(std::ostream &os, const WorkloadSpec &spec, const std::vector<Subscription> &subs);
void write_publications(std::ostream &os, const WorkloadSpec &spec, const std::vector<Publication> &pubs);

/// Throw DatasetError naming the line on malformed input or a kind mismatch.
std::pair<DatasetInfo, std::vector<Subscription>> read_subscriptions(std::istream &is);
std::pair<DatasetInfo, std::vector<Publication>> read_publications(std::istream &is);

} // namespace scbr::workload
