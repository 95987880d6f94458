#pragma once

#include "scbr/containment_index.hpp"
#include "scbr/workload.hpp"

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace scbr::bench {

/// PLAIN: containment index on plaintext. ENCRYPTED: the same index behind
/// the sealed router pipeline (timing covers open + parse + match). ASPE:
/// linear scan over encrypted subscriptions (timing covers the scan only).
/// Every mode's timed operation ends with the distinct matching clients.
enum class Mode { Plain, Encrypted, Aspe };

std::string_view to_string(Mode m) noexcept;
/// Case-insensitive; throws std::invalid_argument.
Mode parse_mode(std::string_view text);
/// "all" or a comma-separated list.
std::vector<Mode> parse_modes(std::string_view text);

inline const std::vector<std::size_t> kDefaultSizes{1000, 2500, 5000, 10000, 25000, 50000, 100000};

struct BenchConfig {
    std::string workload = "e100a1";
    std::vector<std::size_t> sizes = kDefaultSizes;
    std::size_t batch = 1000;
    std::vector<Mode> modes{Mode::Plain, Mode::Encrypted, Mode::Aspe};
    int reps = 3;
    std::uint64_t seed = 1;

    /// Throws std::invalid_argument (sizes not ascending, batch 0, ...) or
    /// workload::UnknownWorkload.
    void validate() const;
};

struct BenchRecord {
    std::string workload;
    Mode mode = Mode::Plain;
    std::size_t db_size = 0;
    int reps = 0;
    /// Per-publication match latency over all timed publications of all reps.
    double mean_us = 0;
    double median_us = 0;
    double p99_us = 0;
    /// Standard deviation of the per-repetition means.
    double stddev_us = 0;
    double reg_per_sec = 0;
    std::size_t footprint_bytes = 0;
    /// Sum over the timed batch of distinct matched clients per publication.
    std::size_t matches_returned = 0;

    friend bool operator==(const BenchRecord &, const BenchRecord &) = default;
};

/// Column order of the CSV schema.
const std::vector<std::string> &csv_columns();
std::string csv_header();
/// Numbers are written with round-trip precision.
std::string to_csv(const BenchRecord &r);
/// Throws std::invalid_argument on a malformed row.
BenchRecord parse_csv_row(std::string_view line);

using Progress = std::function<void(const BenchRecord &)>;

/// One record per (size, mode). The engines of all requested modes are
/// populated side by side. Each repetition walks the batch in chunks of 50
/// publications and times every engine over a chunk in turn, in an order that
/// changes from chunk to chunk. A warm-up batch precedes the timed repetitions.
std::vector<BenchRecord> bench_match(const BenchConfig &cfg, const Progress &progress = {});

struct VerifyOptions {
    /// Negative control: drop one Hasse edge before auditing.
    bool corrupt_index = false;
    /// At most this many diff lines are kept.
    std::size_t max_diffs = 20;
};

struct VerifyReport {
    std::string workload;
    std::size_t n_subs = 0;
    std::size_t n_pubs = 0;
    std::size_t oracle_matches = 0;
    std::size_t plain_mismatches = 0;
    std::size_t enclave_mismatches = 0;
    std::size_t aspe_mismatches = 0;
    std::vector<std::string> diffs;
    std::vector<std::string> audit;

    bool ok() const noexcept {
        return plain_mismatches == 0 && enclave_mismatches == 0 && aspe_mismatches == 0 && audit.empty();
    }
};

inline constexpr std::size_t kMaxVerifySubs = 20000;

/// Runs the containment index, the sealed router pipeline and ASPE against a
/// linear scan with the plaintext matcher. Throws std::invalid_argument when
/// n_subs exceeds kMaxVerifySubs.
VerifyReport verify_oracle(const std::string &workload, std::size_t n_subs, std::size_t n_pubs,
                           std::uint64_t seed, const VerifyOptions &opts = {});

struct StatsRow {
    std::string workload;
    std::size_t db_size = 0;
    std::uint64_t seed = 0;
    IndexStats stats;
};

std::vector<StatsRow> report_stats(const std::string &workload, const std::vector<std::size_t> &sizes,
                                   std::uint64_t seed = 1);
std::string stats_csv_header();
std::string to_csv(const StatsRow &r);

/// Datasets as bench_match builds them: 2 x batch publications (warm-up, then
/// timed), subscriptions drawn from the timed half. Subscriptions for a
/// smaller size are a prefix of those for a larger one.
struct Dataset {
    workload::WorkloadSpec spec;
    std::vector<Publication> warmup;
    std::vector<Publication> timed;
    std::vector<Subscription> subs;
};

Dataset make_dataset(const std::string &workload, std::size_t n_subs, std::size_t batch, std::uint64_t seed);

} // namespace scbr::bench
