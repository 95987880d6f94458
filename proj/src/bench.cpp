#include "scbr/bench.hpp"

#include "scbr/aspe.hpp"
#include "scbr/enclave_router.hpp"
#include "scbr/wire.hpp"

#include <fmt/format.h>
#include <fmt/ranges.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>
#include <set>

namespace scbr::bench {

namespace {

using Clock = std::chrono::steady_clock;

// Every mode's timed operation ends in distinct_routes(), as the router's
// does; this count is taken outside the timing.
template <class It, class Proj>
std::size_t distinct_clients(It first, It last, Proj proj) {
    std::vector<std::string_view> ids;
    for (auto it = first; it != last; ++it) ids.push_back(proj(*it));
    std::sort(ids.begin(), ids.end());
    return static_cast<std::size_t>(std::unique(ids.begin(), ids.end()) - ids.begin());
}

std::size_t distinct_clients(const std::vector<Route> &routes) {
    return distinct_clients(routes.begin(), routes.end(), [](const Route &r) -> std::string_view { return r.client_id; });
}

constexpr std::string_view kReply = "127.0.0.1:1";
constexpr std::size_t kChunk = 50;

class Engine {
public:
    virtual ~Engine() = default;
    /// Builds a fresh engine over subs[0, n); returns the seconds spent.
    virtual double populate(const std::vector<Subscription> &subs, std::size_t n) = 0;
    /// The timed operation; the result is kept for last_clients().
    virtual void run(bool warmup, std::size_t i) = 0;
    virtual std::size_t last_clients() const = 0;
    virtual std::size_t footprint() const = 0;
};

template <class F>
double seconds(F &&f) {
    const auto t0 = Clock::now();
    f();
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

class PlainEngine final : public Engine {
public:
    explicit PlainEngine(const Dataset &ds) {
        for (const auto &p : ds.warmup) warm_.push_back(p.header);
        for (const auto &p : ds.timed) timed_.push_back(p.header);
    }

    double populate(const std::vector<Subscription> &subs, std::size_t n) override {
        index_ = ContainmentIndex();
        return seconds([&] {
            for (std::size_t i = 0; i < n; ++i)
                index_.insert(subs[i], subs[i].client_id, subs[i].sub_id, std::string(kReply));
        });
    }

    void run(bool warmup, std::size_t i) override {
        last_ = distinct_routes(index_.match(warmup ? warm_[i] : timed_[i]));
    }
    std::size_t last_clients() const override { return distinct_clients(last_); }
    std::size_t footprint() const override { return index_.footprint_bytes(); }

private:
    std::vector<PublicationHeader> warm_, timed_;
    ContainmentIndex index_;
    std::vector<Route> last_;
};

class EncryptedEngine final : public Engine {
public:
    explicit EncryptedEngine(const Dataset &ds)
        : sk_(crypto::SymKey::generate()), signer_(crypto::KeyPair::generate()) {
        std::size_t k = 0;
        for (const auto &p : ds.warmup)
            warm_.push_back(wire::make_pub(sk_, fmt::format("w{}", k++), serialize(p.header), p.payload));
        k = 0;
        for (const auto &p : ds.timed)
            timed_.push_back(wire::make_pub(sk_, fmt::format("p{}", k++), serialize(p.header), p.payload));
    }

    double populate(const std::vector<Subscription> &subs, std::size_t n) override {
        // sealing and signing belong to the publisher, not to registration
        while (frames_.size() < n) {
            const auto &s = subs[frames_.size()];
            frames_.push_back(
                wire::make_subreg(sk_, signer_.private_key, s.sub_id, s.client_id, std::string(kReply), serialize(s)));
        }
        router_ = std::make_unique<EnclaveRouter>(std::numeric_limits<std::size_t>::max());
        router_->provision({sk_, signer_.public_key, 1});
        return seconds([&] {
            for (std::size_t i = 0; i < n; ++i) {
                const auto r = router_->ecall_register(frames_[i]);
                if (const auto *e = std::get_if<wire::Err>(&r))
                    throw std::runtime_error(fmt::format("router rejected {}: {}", frames_[i].sub, e->msg));
            }
        });
    }

    void run(bool warmup, std::size_t i) override { last_ = router_->ecall_match(warmup ? warm_[i] : timed_[i]); }
    std::size_t last_clients() const override { return distinct_clients(last_.routes); }
    std::size_t footprint() const override { return router_->footprint(); }

private:
    crypto::SymKey sk_;
    crypto::KeyPair signer_;
    std::vector<wire::Pub> warm_, timed_;
    std::vector<wire::SubReg> frames_;
    std::unique_ptr<EnclaveRouter> router_;
    MatchOutcome last_;
};

aspe::AspeKey aspe_key(const workload::WorkloadSpec &spec, std::uint64_t seed) {
    auto key = aspe::AspeKey::generate(seed);
    for (const auto &[attr, mag] : workload::attribute_magnitudes(spec)) key.fit_scale(attr, mag);
    return key;
}

class AspeEngine final : public Engine {
public:
    AspeEngine(const Dataset &ds, std::uint64_t seed) : key_(aspe_key(ds.spec, seed)), rng_(seed ^ 0xa5be) {
        for (const auto &p : ds.warmup) warm_.push_back(aspe::encrypt_pub(key_, p.header, rng_));
        for (const auto &p : ds.timed) timed_.push_back(aspe::encrypt_pub(key_, p.header, rng_));
    }

    double populate(const std::vector<Subscription> &subs, std::size_t n) override {
        matcher_ = aspe::AspeMatcher();
        return seconds([&] {
            for (std::size_t i = 0; i < n; ++i)
                matcher_.add(aspe::encrypt_sub(key_, subs[i], rng_),
                             {subs[i].client_id, subs[i].sub_id, std::string(kReply)});
        });
    }

    void run(bool warmup, std::size_t i) override {
        last_ = distinct_routes(matcher_.match(warmup ? warm_[i] : timed_[i]));
    }
    std::size_t last_clients() const override { return distinct_clients(last_); }
    std::size_t footprint() const override { return matcher_.footprint_bytes(); }

private:
    aspe::AspeKey key_;
    aspe::Rng rng_;
    std::vector<aspe::EncodedPublication> warm_, timed_;
    aspe::AspeMatcher matcher_;
    std::vector<Route> last_;
};

std::unique_ptr<Engine> make_engine(Mode m, const Dataset &ds, std::uint64_t seed) {
    switch (m) {
    case Mode::Plain: return std::make_unique<PlainEngine>(ds);
    case Mode::Encrypted: return std::make_unique<EncryptedEngine>(ds);
    case Mode::Aspe: return std::make_unique<AspeEngine>(ds, seed);
    }
    throw std::logic_error("unknown mode");
}

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <class T>
T parse_number(std::string_view field, std::string_view column) {
    T v{};
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
    if (ec != std::errc{} || ptr != field.data() + field.size() || field.empty())
        throw std::invalid_argument(fmt::format("column {}: '{}' is not a number", column, field));
    return v;
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return std::tolower(c); });
    return out;
}

} // namespace

std::string_view to_string(Mode m) noexcept {
    switch (m) {
    case Mode::Plain: return "PLAIN";
    case Mode::Encrypted: return "ENCRYPTED";
    case Mode::Aspe: return "ASPE";
    }
    return "?";
}

Mode parse_mode(std::string_view text) {
    const auto t = lower(text);
    if (t == "plain") return Mode::Plain;
    if (t == "encrypted") return Mode::Encrypted;
    if (t == "aspe") return Mode::Aspe;
    throw std::invalid_argument(fmt::format("unknown mode '{}' (PLAIN, ENCRYPTED, ASPE or all)", text));
}

std::vector<Mode> parse_modes(std::string_view text) {
    if (lower(text) == "all") return {Mode::Plain, Mode::Encrypted, Mode::Aspe};
    std::vector<Mode> out;
    for (auto part : split(text, ',')) {
        const auto m = parse_mode(part);
        if (std::find(out.begin(), out.end(), m) == out.end()) out.push_back(m);
    }
    return out;
}

void BenchConfig::validate() const {
    workload::workload_spec(workload, seed);
    if (sizes.empty()) throw std::invalid_argument("at least one size is required");
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (sizes[i] == 0) throw std::invalid_argument("sizes must be positive");
        if (i > 0 && sizes[i] <= sizes[i - 1]) throw std::invalid_argument("sizes must be strictly ascending");
    }
    if (batch == 0) throw std::invalid_argument("batch must be at least 1");
    if (reps < 1) throw std::invalid_argument("reps must be at least 1");
    if (modes.empty()) throw std::invalid_argument("at least one mode is required");
}

const std::vector<std::string> &csv_columns() {
    static const std::vector<std::string> cols{"workload",  "mode",      "db_size",     "reps",
                                               "mean_us",   "median_us", "p99_us",      "stddev_us",
                                               "reg_per_sec", "footprint_bytes", "matches_returned"};
    return cols;
}

std::string csv_header() { return fmt::format("{}", fmt::join(csv_columns(), ",")); }

std::string to_csv(const BenchRecord &r) {
    return fmt::format("{},{},{},{},{},{},{},{},{},{},{}", r.workload, to_string(r.mode), r.db_size, r.reps, r.mean_us,
                       r.median_us, r.p99_us, r.stddev_us, r.reg_per_sec, r.footprint_bytes, r.matches_returned);
}

BenchRecord parse_csv_row(std::string_view line) {
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    const auto f = split(line, ',');
    const auto &cols = csv_columns();
    if (f.size() != cols.size())
        throw std::invalid_argument(fmt::format("expected {} columns, got {}", cols.size(), f.size()));
    BenchRecord r;
    r.workload = std::string(f[0]);
    if (r.workload.empty()) throw std::invalid_argument("column workload is empty");
    r.mode = parse_mode(f[1]);
    r.db_size = parse_number<std::size_t>(f[2], cols[2]);
    r.reps = parse_number<int>(f[3], cols[3]);
    r.mean_us = parse_number<double>(f[4], cols[4]);
    r.median_us = parse_number<double>(f[5], cols[5]);
    r.p99_us = parse_number<double>(f[6], cols[6]);
    r.stddev_us = parse_number<double>(f[7], cols[7]);
    r.reg_per_sec = parse_number<double>(f[8], cols[8]);
    r.footprint_bytes = parse_number<std::size_t>(f[9], cols[9]);
    r.matches_returned = parse_number<std::size_t>(f[10], cols[10]);
    return r;
}

Dataset make_dataset(const std::string &name, std::size_t n_subs, std::size_t batch, std::uint64_t seed) {
    Dataset ds;
    ds.spec = workload::workload_spec(name, seed);
    auto pubs = workload::gen_publications(ds.spec, 2 * batch);
    ds.warmup.assign(pubs.begin(), pubs.begin() + static_cast<std::ptrdiff_t>(batch));
    ds.timed.assign(pubs.begin() + static_cast<std::ptrdiff_t>(batch), pubs.end());
    ds.subs = workload::gen_subscriptions(ds.spec, n_subs, ds.timed);
    return ds;
}

std::vector<BenchRecord> bench_match(const BenchConfig &cfg, const Progress &progress) {
    cfg.validate();
    const auto ds = make_dataset(cfg.workload, cfg.sizes.back(), cfg.batch, cfg.seed);
    std::vector<std::unique_ptr<Engine>> engines;
    for (auto m : cfg.modes) engines.push_back(make_engine(m, ds, cfg.seed));
    const std::size_t k = engines.size();

    // Engines take turns over chunks of kChunk publications, in successive
    // permutation orders. Per-publication interleaving let one engine's
    // working set evict another's; whole-batch blocks left the modes far
    // apart in time, so machine noise did not cancel in their difference.
    std::vector<std::vector<std::size_t>> orders;
    std::vector<std::size_t> perm(k);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    do orders.push_back(perm);
    while (std::next_permutation(perm.begin(), perm.end()));

    std::vector<BenchRecord> out;
    for (auto n : cfg.sizes) {
        std::vector<double> reg_secs(k);
        for (std::size_t e = 0; e < k; ++e) {
            reg_secs[e] = engines[e]->populate(ds.subs, n);
            for (std::size_t i = 0; i < cfg.batch; ++i) engines[e]->run(true, i);
        }

        std::vector<std::vector<double>> samples(k);
        std::vector<std::vector<double>> rep_means(k);
        std::vector<std::size_t> matches(k, 0);
        for (int rep = 0; rep < cfg.reps; ++rep) {
            std::vector<double> sum(k, 0.0);
            for (std::size_t c0 = 0; c0 < cfg.batch; c0 += kChunk) {
                const auto chunk = static_cast<std::size_t>(rep) * cfg.batch + c0;
                for (const auto e : orders[(chunk / kChunk) % orders.size()]) {
                    for (std::size_t i = c0; i < std::min(c0 + kChunk, cfg.batch); ++i) {
                        const auto t0 = Clock::now();
                        engines[e]->run(false, i);
                        const auto us = std::chrono::duration<double, std::micro>(Clock::now() - t0).count();
                        samples[e].push_back(us);
                        sum[e] += us;
                        if (rep == 0) matches[e] += engines[e]->last_clients();
                    }
                }
            }
            for (std::size_t e = 0; e < k; ++e) rep_means[e].push_back(sum[e] / static_cast<double>(cfg.batch));
        }

        for (std::size_t e = 0; e < k; ++e) {
            auto &s = samples[e];
            std::sort(s.begin(), s.end());
            BenchRecord r;
            r.workload = cfg.workload;
            r.mode = cfg.modes[e];
            r.db_size = n;
            r.reps = cfg.reps;
            r.mean_us = std::accumulate(s.begin(), s.end(), 0.0) / static_cast<double>(s.size());
            r.median_us = s.size() % 2 ? s[s.size() / 2] : 0.5 * (s[s.size() / 2 - 1] + s[s.size() / 2]);
            const auto rank = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(s.size())));
            r.p99_us = s[std::max<std::size_t>(rank, 1) - 1];
            const auto &rm = rep_means[e];
            if (rm.size() > 1) {
                const double mu = std::accumulate(rm.begin(), rm.end(), 0.0) / static_cast<double>(rm.size());
                double acc = 0;
                for (double x : rm) acc += (x - mu) * (x - mu);
                r.stddev_us = std::sqrt(acc / static_cast<double>(rm.size() - 1));
            }
            r.reg_per_sec = reg_secs[e] > 0 ? static_cast<double>(n) / reg_secs[e] : 0.0;
            r.footprint_bytes = engines[e]->footprint();
            r.matches_returned = matches[e];
            if (progress) progress(r);
            out.push_back(std::move(r));
        }
    }
    return out;
}

VerifyReport verify_oracle(const std::string &name, std::size_t n_subs, std::size_t n_pubs, std::uint64_t seed,
                           const VerifyOptions &opts) {
    if (n_subs > kMaxVerifySubs)
        throw std::invalid_argument(fmt::format("verify is quadratic; at most {} subscriptions", kMaxVerifySubs));
    VerifyReport rep;
    rep.workload = name;
    rep.n_subs = n_subs;
    rep.n_pubs = n_pubs;

    const auto spec = workload::workload_spec(name, seed);
    const auto pubs = workload::gen_publications(spec, n_pubs);
    const auto subs = workload::gen_subscriptions(spec, n_subs, pubs);

    ContainmentIndex index;
    for (const auto &s : subs) index.insert(s, s.client_id, s.sub_id);
    if (opts.corrupt_index) {
        for (auto n : index.nodes()) {
            if (!index.children(n).empty()) {
                index.corrupt_remove_edge(n, index.children(n).front());
                break;
            }
        }
    }

    const auto sk = crypto::SymKey::generate();
    const auto signer = crypto::KeyPair::generate();
    EnclaveRouter router;
    router.provision({sk, signer.public_key, 1});
    for (const auto &s : subs) {
        const auto r = router.ecall_register(
            wire::make_subreg(sk, signer.private_key, s.sub_id, s.client_id, std::string(kReply), serialize(s)));
        if (const auto *e = std::get_if<wire::Err>(&r)) {
            ++rep.enclave_mismatches;
            if (rep.diffs.size() < opts.max_diffs)
                rep.diffs.push_back(fmt::format("register {}: ERR {}", s.sub_id, e->msg));
        }
    }

    const auto key = aspe_key(spec, seed);
    aspe::Rng rng(seed ^ 0xa5be);
    aspe::AspeMatcher matcher;
    for (const auto &s : subs) matcher.add(aspe::encrypt_sub(key, s, rng), {s.client_id, s.sub_id, {}});

    auto compare = [&](std::string_view mode, const std::string &pub, const std::set<std::string> &want,
                       const std::set<std::string> &got, std::size_t &counter) {
        if (want == got) return;
        ++counter;
        if (rep.diffs.size() >= opts.max_diffs) return;
        std::vector<std::string> missing, extra;
        std::set_difference(want.begin(), want.end(), got.begin(), got.end(), std::back_inserter(missing));
        std::set_difference(got.begin(), got.end(), want.begin(), want.end(), std::back_inserter(extra));
        rep.diffs.push_back(fmt::format("{} {}: missing [{}] extra [{}]", mode, pub, fmt::join(missing, " "),
                                        fmt::join(extra, " ")));
    };
    auto ids = [](const auto &refs) {
        std::set<std::string> out;
        for (const auto &r : refs) out.insert(r.client_id);
        return out;
    };

    for (std::size_t p = 0; p < pubs.size(); ++p) {
        const auto &pub = pubs[p];
        const auto pub_id = pub.pub_id.empty() ? fmt::format("p{}", p) : pub.pub_id;
        std::set<std::string> oracle;
        for (const auto &s : subs)
            if (matches(pub.header, s)) oracle.insert(s.client_id);
        rep.oracle_matches += oracle.size();

        compare("PLAIN", pub_id, oracle, ids(index.match(pub.header)), rep.plain_mismatches);

        const auto outcome = router.ecall_match(wire::make_pub(sk, pub_id, serialize(pub.header), pub.payload));
        if (!outcome.ok()) {
            ++rep.enclave_mismatches;
            if (rep.diffs.size() < opts.max_diffs)
                rep.diffs.push_back(fmt::format("ENCRYPTED {}: ERR {}", pub_id, outcome.error->msg));
        } else {
            compare("ENCRYPTED", pub_id, oracle, ids(outcome.routes), rep.enclave_mismatches);
        }

        compare("ASPE", pub_id, oracle, ids(matcher.match(aspe::encrypt_pub(key, pub.header, rng))),
                rep.aspe_mismatches);
    }

    rep.audit = index.audit();
    return rep;
}

std::vector<StatsRow> report_stats(const std::string &name, const std::vector<std::size_t> &sizes,
                                   std::uint64_t seed) {
    if (sizes.empty()) return {};
    auto sorted = sizes;
    std::sort(sorted.begin(), sorted.end());
    const auto ds = make_dataset(name, sorted.back(), 1000, seed);
    ContainmentIndex index;
    std::vector<StatsRow> out;
    std::size_t done = 0;
    for (auto n : sorted) {
        for (; done < n; ++done) index.insert(ds.subs[done], ds.subs[done].client_id, ds.subs[done].sub_id);
        out.push_back({name, n, seed, index.stats()});
    }
    return out;
}

std::string stats_csv_header() { return "workload,db_size,seed,nodes,roots,max_depth,footprint_bytes"; }

std::string to_csv(const StatsRow &r) {
    return fmt::format("{},{},{},{},{},{},{}", r.workload, r.db_size, r.seed, r.stats.node_count, r.stats.root_count,
                       r.stats.max_depth, r.stats.footprint_bytes);
}

} // namespace scbr::bench
