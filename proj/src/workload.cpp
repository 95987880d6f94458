#include "scbr/workload.hpp"

#include "scbr/crypto.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <set>
#include <unordered_map>

#include <fmt/format.h>
#include <json.hpp>

namespace scbr::workload {

namespace {

using Json = nlohmann::ordered_json;

const std::vector<MixRow> kMix80{{80, 1}, {20, 0}};
const std::vector<MixRow> kMix100{{100, 1}};
const std::vector<MixRow> kMixExt{{15, 0}, {60, 1}, {15, 2}, {10, 3}};

struct Row {
    const char *name;
    const std::vector<MixRow> *mix;
    int multiplier;
    Distribution dist;
};

const Row kRows[] = {
    {"e100a1", &kMix100, 1, Distribution::Uniform},
    {"e80a1", &kMix80, 1, Distribution::Uniform},
    {"e80a2", &kMix80, 2, Distribution::Uniform},
    {"e80a4", &kMix80, 4, Distribution::Uniform},
    {"extsub2", &kMixExt, 2, Distribution::Uniform},
    {"extsub4", &kMixExt, 4, Distribution::Uniform},
    {"e80a1z100", &kMix80, 1, Distribution::ZipfOnSymbol},
    {"e80a1zz100", &kMix80, 1, Distribution::ZipfOnAll},
    {"e100a1zz100", &kMix100, 1, Distribution::ZipfOnAll},
};

constexpr std::uint64_t kPubStream = 0x7075626c69636174ull;
constexpr std::uint64_t kSubStream = 0x7375627363726970ull;
constexpr std::uint64_t kPoolSeed = 0x53594d424f4c53ull;

/// Per-symbol market profile; quotes are drawn around it.
struct Profile {
    double price;
    double volume;
    double shares;
};

std::uint64_t fnv1a(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (char c : s) {
        h ^= static_cast<std::uint8_t>(c);
        h *= 0x100000001b3ull;
    }
    return h;
}

double log_uniform(Rng &rng, double lo, double hi) {
    return std::exp(std::log(lo) + (std::log(hi) - std::log(lo)) * unit_uniform(rng));
}

const std::vector<Profile> &profiles() {
    static const std::vector<Profile> p = [] {
        Rng rng(kPoolSeed + 1);
        std::vector<Profile> out;
        for (std::size_t i = 0; i < kSymbolPool; ++i) {
            const double price = log_uniform(rng, 5, 500);
            const double volume = log_uniform(rng, 1e4, 1e7);
            const double shares = log_uniform(rng, 1e6, 1e9);
            out.push_back({price, volume, shares});
        }
        return out;
    }();
    return p;
}

const AttributeDomain &domain(std::string_view base) {
    for (const auto &d : quote_domains()) {
        if (d.name == base) return d;
    }
    throw std::logic_error(fmt::format("no domain for '{}'", base));
}

/// Steps below one are stored as their inverse so that k/inv is correctly rounded.
bool fine_grid(const AttributeDomain &d) { return d.grid < 1; }
double inverse_grid(const AttributeDomain &d) { return std::round(1 / d.grid); }

double snap(double x, const AttributeDomain &d) {
    if (fine_grid(d)) {
        const double inv = inverse_grid(d);
        const double k = std::clamp(std::round(x * inv), std::ceil(d.lo * inv), std::floor(d.hi * inv));
        return k / inv;
    }
    const double k = std::clamp(std::round(x / d.grid), std::ceil(d.lo / d.grid), std::floor(d.hi / d.grid));
    return k * d.grid;
}

/// Midpoint between the grid value at or below x and the next one; never a value.
double half_grid_below(double x, const AttributeDomain &d) {
    if (fine_grid(d)) {
        const double inv = inverse_grid(d);
        return (2 * std::floor(x * inv) + 1) / (2 * inv);
    }
    return (std::floor(x / d.grid) + 0.5) * d.grid;
}

struct Quote {
    std::string symbol;
    std::vector<std::pair<std::string, double>> values; // by base name
};

Quote draw_quote(Rng &rng) {
    const auto s = static_cast<std::size_t>(uniform_int(rng, 0, kSymbolPool - 1));
    const auto &prof = profiles()[s];
    auto jitter = [&](double base, double spread) { return base * (1 + spread * (unit_uniform(rng) - 0.5)); };

    Quote q;
    q.symbol = symbol_pool()[s];
    const double price = snap(jitter(prof.price, 0.10), domain("price"));
    const double open = snap(jitter(price, 0.04), domain("open"));
    const double close = snap(jitter(price, 0.04), domain("close"));
    const double high = snap(std::max({open, close, price}) * (1 + 0.02 * unit_uniform(rng)), domain("high"));
    const double low = snap(std::min({open, close, price}) * (1 - 0.02 * unit_uniform(rng)), domain("low"));
    const double change = snap(close - open, domain("change"));
    const double volume = snap(prof.volume * (0.2 + 1.6 * unit_uniform(rng)), domain("volume"));
    q.values = {{"open", open},     {"close", close},   {"high", high},
                {"low", low},       {"price", price},   {"volume", volume},
                {"change", change}};
    // optional attributes are drawn unconditionally so the stream does not
    // depend on which of them end up present
    const double bid = snap(price * (1 - 0.005 * unit_uniform(rng)), domain("bid"));
    const double ask = snap(price * (1 + 0.005 * unit_uniform(rng)), domain("ask"));
    const double cap = snap(price * prof.shares, domain("cap"));
    const bool has_bid = unit_uniform(rng) < kOptionalPresence;
    const bool has_ask = unit_uniform(rng) < kOptionalPresence;
    const bool has_cap = unit_uniform(rng) < kOptionalPresence;
    if (has_bid) q.values.emplace_back("bid", bid);
    if (has_ask) q.values.emplace_back("ask", ask);
    if (has_cap) q.values.emplace_back("cap", cap);
    return q;
}

std::string base_of(std::string_view attr) {
    const auto us = attr.rfind('_');
    return std::string(us == std::string_view::npos ? attr : attr.substr(0, us));
}

/// Distinct values of one attribute across the publication sample, most
/// frequent first; ties are broken by a seeded shuffle, not by value.
struct Ranking {
    std::vector<AttributeValue> values;
    std::unique_ptr<ZipfSampler> zipf;
};

class Population {
public:
    Population(const std::vector<Publication> &pubs, std::uint64_t seed) : pubs_(pubs), seed_(seed) {}

    const Ranking &ranking(const std::string &attr) {
        auto it = rankings_.find(attr);
        if (it != rankings_.end()) return it->second;
        std::map<std::string, std::pair<std::size_t, const AttributeValue *>> counts;
        for (const auto &p : pubs_) {
            if (const auto *v = p.header.find(attr)) {
                auto key = v->is_text() ? "t" + v->as_text() : "n" + format_number(v->as_number());
                auto &slot = counts[key];
                ++slot.first;
                slot.second = v;
            }
        }
        std::vector<std::pair<std::size_t, const AttributeValue *>> order;
        for (auto &[k, c] : counts) order.push_back(c);
        Rng rng(seed_ ^ fnv1a(attr));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<std::size_t>(uniform_int(rng, 0, std::int64_t(i) - 1))]);
        }
        std::stable_sort(order.begin(), order.end(), [](const auto &a, const auto &b) { return a.first > b.first; });
        Ranking r;
        for (const auto &o : order) r.values.push_back(*o.second);
        if (!r.values.empty()) r.zipf = std::make_unique<ZipfSampler>(r.values.size());
        return rankings_.emplace(attr, std::move(r)).first->second;
    }

    const std::vector<std::size_t> &carrying(const std::string &attr, const std::string &value) {
        auto &by_value = carriers_[attr];
        if (by_value.empty()) {
            for (std::size_t i = 0; i < pubs_.size(); ++i) {
                if (const auto *v = pubs_[i].header.find(attr); v && v->is_text()) by_value[v->as_text()].push_back(i);
            }
        }
        return by_value.at(value);
    }

    const std::vector<std::string> &numeric_attrs() {
        if (numeric_.empty()) {
            std::set<std::string> names;
            for (const auto &p : pubs_) {
                for (const auto &[a, v] : p.header.entries()) {
                    if (v.is_number()) names.insert(a);
                }
            }
            numeric_.assign(names.begin(), names.end());
        }
        return numeric_;
    }

private:
    const std::vector<Publication> &pubs_;
    std::uint64_t seed_;
    std::unordered_map<std::string, Ranking> rankings_;
    std::unordered_map<std::string, std::unordered_map<std::string, std::vector<std::size_t>>> carriers_;
    std::vector<std::string> numeric_;
};

int draw_equalities(const WorkloadSpec &spec, Rng &rng) {
    const double u = 100 * unit_uniform(rng);
    double acc = 0;
    for (const auto &row : spec.mix) {
        acc += row.percent;
        if (u < acc) return row.equalities;
    }
    return spec.mix.back().equalities;
}

Constraint range_around(const std::string &attr, double center, Rng &rng) {
    const auto &d = domain(base_of(attr));
    const double width = (d.hi - d.lo) * (0.01 + 0.19 * unit_uniform(rng));
    const double lo = half_grid_below(center - width / 2, d);
    const double hi = half_grid_below(center + width / 2, d);
    const bool lo_inc = unit_uniform(rng) < 0.5;
    const bool hi_inc = unit_uniform(rng) < 0.5;
    const bool has_lo = lo > d.lo;
    const bool has_hi = hi < d.hi;
    if (has_lo && has_hi) return Constraint::between(attr, lo, lo_inc, hi, hi_inc);
    if (has_lo) return lo_inc ? Constraint::greater_equal(attr, lo) : Constraint::greater(attr, lo);
    return hi_inc ? Constraint::less_equal(attr, hi) : Constraint::less(attr, hi);
}

template <class T>
void shuffle(std::vector<T> &v, Rng &rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
        std::swap(v[i - 1], v[static_cast<std::size_t>(uniform_int(rng, 0, std::int64_t(i) - 1))]);
    }
}

DatasetInfo read_info(std::istream &is, const char *kind) {
    std::string line;
    if (!std::getline(is, line)) throw DatasetError("dataset: missing header line");
    const auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("workload") || !j.contains("seed") || !j.contains("kind")) {
        throw DatasetError("dataset line 1: expected {\"workload\",\"seed\",\"kind\"}");
    }
    DatasetInfo info;
    try {
        info.workload = j.at("workload").get<std::string>();
        info.seed = j.at("seed").get<std::uint64_t>();
        info.kind = j.at("kind").get<std::string>();
    } catch (const nlohmann::json::exception &e) {
        throw DatasetError(fmt::format("dataset line 1: {}", e.what()));
    }
    if (info.kind != kind) throw DatasetError(fmt::format("dataset is '{}', expected '{}'", info.kind, kind));
    return info;
}

void write_info(std::ostream &os, const WorkloadSpec &spec, const char *kind) {
    Json j;
    j["workload"] = spec.name;
    j["seed"] = spec.seed;
    j["kind"] = kind;
    os << j.dump() << '\n';
}

template <class F>
void for_each_record(std::istream &is, F &&f) {
    std::string line;
    std::size_t lineno = 1;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) throw DatasetError(fmt::format("dataset line {}: not a JSON object", lineno));
        try {
            f(j);
        } catch (const DatasetError &) {
            throw;
        } catch (const std::exception &e) {
            throw DatasetError(fmt::format("dataset line {}: {}", lineno, e.what()));
        }
    }
}

} // namespace

std::string_view to_string(Distribution d) noexcept {
    switch (d) {
    case Distribution::Uniform: return "uniform";
    case Distribution::ZipfOnSymbol: return "zipf-symbol";
    case Distribution::ZipfOnAll: return "zipf-all";
    }
    return "?";
}

const std::vector<std::string> &workload_names() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto &r : kRows) out.emplace_back(r.name);
        return out;
    }();
    return names;
}

WorkloadSpec workload_spec(std::string_view name, std::uint64_t seed) {
    for (const auto &r : kRows) {
        if (name == r.name) return WorkloadSpec{r.name, *r.mix, r.multiplier, r.dist, seed};
    }
    throw UnknownWorkload(fmt::format("unknown workload '{}'", name));
}

const std::vector<AttributeDomain> &quote_domains() {
    static const std::vector<AttributeDomain> d{
        {"open", 1, 1000, 0.01, false},   {"close", 1, 1000, 0.01, false}, {"high", 1, 1000, 0.01, false},
        {"low", 1, 1000, 0.01, false},    {"price", 1, 1000, 0.01, false}, {"volume", 1e3, 1e8, 100, false},
        {"change", -50, 50, 0.01, false}, {"bid", 1, 1000, 0.01, true},    {"ask", 1, 1000, 0.01, true},
        {"cap", 1e6, 1e11, 1e4, true},
    };
    return d;
}

const std::vector<std::string> &symbol_pool() {
    static const std::vector<std::string> pool = [] {
        Rng rng(kPoolSeed);
        std::set<std::string> seen;
        std::vector<std::string> out;
        while (out.size() < kSymbolPool) {
            std::string s(static_cast<std::size_t>(uniform_int(rng, 2, 4)), 'A');
            for (auto &c : s) c = static_cast<char>('A' + uniform_int(rng, 0, 25));
            if (seen.insert(s).second) out.push_back(s);
        }
        return out;
    }();
    return pool;
}

std::string attribute_name(std::string_view base, int quote, int multiplier) {
    return multiplier == 1 ? std::string(base) : fmt::format("{}_{}", base, quote);
}

std::vector<std::pair<std::string, double>> attribute_magnitudes(const WorkloadSpec &spec) {
    std::vector<std::pair<std::string, double>> out;
    for (int q = 1; q <= spec.multiplier; ++q) {
        for (const auto &d : quote_domains()) {
            out.emplace_back(attribute_name(d.name, q, spec.multiplier), std::max(std::abs(d.lo), std::abs(d.hi)));
        }
    }
    return out;
}

std::vector<Publication> gen_publications(const WorkloadSpec &spec, std::size_t n) {
    Rng rng(spec.seed ^ kPubStream);
    std::vector<Publication> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        Publication p;
        p.pub_id = fmt::format("p{}", i);
        for (int q = 1; q <= spec.multiplier; ++q) {
            auto quote = draw_quote(rng);
            p.header.add(attribute_name("symbol", q, spec.multiplier), std::move(quote.symbol));
            for (auto &[base, v] : quote.values) p.header.add(attribute_name(base, q, spec.multiplier), v);
        }
        p.payload.resize(kPayloadBytes);
        for (auto &c : p.payload) c = static_cast<char>(rng() >> 56);
        out.push_back(std::move(p));
    }
    return out;
}

std::vector<Subscription> gen_subscriptions(const WorkloadSpec &spec, std::size_t n,
                                            const std::vector<Publication> &pubs) {
    if (pubs.empty()) throw std::invalid_argument("gen_subscriptions needs a non-empty publication sample");
    Rng rng(spec.seed ^ kSubStream);
    Population pop(pubs, spec.seed);
    const int w = spec.multiplier;
    std::vector<Subscription> out;
    out.reserve(n);

    for (std::size_t i = 0; i < n; ++i) {
        const int k = draw_equalities(spec, rng);
        std::vector<int> quotes(static_cast<std::size_t>(w));
        for (int q = 0; q < w; ++q) quotes[static_cast<std::size_t>(q)] = q + 1;
        shuffle(quotes, rng);
        const int symbol_eqs = std::min(k, w);

        // Uniform and Zipf-on-symbol draw a whole publication and read values
        // off it; Zipf-on-all draws every value independently by rank.
        const Publication *tmpl = nullptr;
        if (spec.distribution == Distribution::Uniform ||
            (spec.distribution == Distribution::ZipfOnSymbol && symbol_eqs == 0)) {
            tmpl = &pubs[static_cast<std::size_t>(uniform_int(rng, 0, std::int64_t(pubs.size()) - 1))];
        } else if (spec.distribution == Distribution::ZipfOnSymbol) {
            const auto attr = attribute_name("symbol", quotes[0], w);
            const auto &rank = pop.ranking(attr);
            const auto &sym = rank.values[(*rank.zipf)(rng) - 1].as_text();
            const auto &carriers = pop.carrying(attr, sym);
            tmpl = &pubs[carriers[static_cast<std::size_t>(uniform_int(rng, 0, std::int64_t(carriers.size()) - 1))]];
        }
        auto value_of = [&](const std::string &attr) -> std::optional<AttributeValue> {
            if (tmpl) {
                const auto *v = tmpl->header.find(attr);
                return v ? std::optional<AttributeValue>(*v) : std::nullopt;
            }
            const auto &rank = pop.ranking(attr);
            if (rank.values.empty()) return std::nullopt;
            return rank.values[(*rank.zipf)(rng) - 1];
        };

        Subscription s;
        for (int e = 0; e < symbol_eqs; ++e) {
            const auto attr = attribute_name("symbol", quotes[static_cast<std::size_t>(e)], w);
            if (auto v = value_of(attr); v && v->is_text()) {
                s.constraints.push_back(Constraint::equals(attr, v->as_text()));
            }
        }

        std::vector<std::string> candidates;
        if (tmpl) {
            for (const auto &[a, v] : tmpl->header.entries()) {
                if (v.is_number()) candidates.push_back(a);
            }
        } else {
            candidates = pop.numeric_attrs();
        }
        shuffle(candidates, rng);
        // the primary quote's price leads; point equalities and ranges are
        // taken from the front
        const auto lead = std::find(candidates.begin(), candidates.end(), attribute_name("price", quotes[0], w));
        if (lead != candidates.end()) std::rotate(candidates.begin(), lead, lead + 1);
        auto next = candidates.begin();

        for (int e = symbol_eqs; e < k && next != candidates.end(); ++e, ++next) {
            if (auto v = value_of(*next); v && v->is_number()) {
                s.constraints.push_back(Constraint::equals(*next, v->as_number()));
            }
        }
        const auto ranges = uniform_int(rng, 1, 3);
        for (std::int64_t r = 0; r < ranges && next != candidates.end(); ++r, ++next) {
            if (auto v = value_of(*next); v && v->is_number()) s.constraints.push_back(range_around(*next, v->as_number(), rng));
        }

        s = canonicalize(std::move(s));
        s.sub_id = fmt::format("s{}", i);
        s.client_id = fmt::format("c{}", i);
        out.push_back(std::move(s));
    }
    return out;
}

ZipfSampler::ZipfSampler(std::size_t n, double s) {
    if (n == 0) throw std::invalid_argument("ZipfSampler needs at least one rank");
    cdf_.resize(n);
    double acc = 0;
    for (std::size_t k = 1; k <= n; ++k) {
        acc += 1.0 / std::pow(static_cast<double>(k), s);
        cdf_[k - 1] = acc;
    }
    for (auto &c : cdf_) c /= acc;
    cdf_.back() = 1.0;
}

std::size_t ZipfSampler::operator()(Rng &rng) const {
    const double u = unit_uniform(rng);
    return static_cast<std::size_t>(std::upper_bound(cdf_.begin(), cdf_.end(), u) - cdf_.begin()) + 1;
}

double ZipfSampler::probability(std::size_t rank) const {
    if (rank == 0 || rank > cdf_.size()) return 0;
    return rank == 1 ? cdf_[0] : cdf_[rank - 1] - cdf_[rank - 2];
}

std::size_t zipf_sample(double s, std::size_t n, Rng &rng) { return ZipfSampler(n, s)(rng); }

double unit_uniform(Rng &rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::int64_t uniform_int(Rng &rng, std::int64_t lo, std::int64_t hi) {
    const auto span = static_cast<std::uint64_t>(hi - lo) + 1;
    if (span == 0) return static_cast<std::int64_t>(rng());
    // rejection keeps the draw exactly uniform
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
    std::uint64_t x;
    do {
        x = rng();
    } while (x >= limit);
    return lo + static_cast<std::int64_t>(x % span);
}

void write_subscriptions(std::ostream &os, const WorkloadSpec &spec, const std::vector<Subscription> &subs) {
    write_info(os, spec, "subs");
    for (const auto &s : subs) {
        Json j;
        j["sub"] = s.sub_id;
        j["client"] = s.client_id;
        j["text"] = serialize(s);
        os << j.dump() << '\n';
    }
}

void write_publications(std::ostream &os, const WorkloadSpec &spec, const std::vector<Publication> &pubs) {
    write_info(os, spec, "pubs");
    for (const auto &p : pubs) {
        Json j;
        j["pub"] = p.pub_id;
        j["hdr"] = serialize(p.header);
        j["payload"] = crypto::base64_encode(p.payload);
        os << j.dump() << '\n';
    }
}

std::pair<DatasetInfo, std::vector<Subscription>> read_subscriptions(std::istream &is) {
    auto info = read_info(is, "subs");
    std::vector<Subscription> out;
    for_each_record(is, [&](const nlohmann::json &j) {
        auto s = parse_subscription(j.at("text").get<std::string>());
        if (!is_canonical(s)) throw DatasetError("subscription text is not canonical");
        s.sub_id = j.at("sub").get<std::string>();
        s.client_id = j.at("client").get<std::string>();
        out.push_back(std::move(s));
    });
    return {std::move(info), std::move(out)};
}

std::pair<DatasetInfo, std::vector<Publication>> read_publications(std::istream &is) {
    auto info = read_info(is, "pubs");
    std::vector<Publication> out;
    for_each_record(is, [&](const nlohmann::json &j) {
        Publication p;
        p.header = parse_header(j.at("hdr").get<std::string>());
        p.payload = crypto::base64_decode(j.at("payload").get<std::string>());
        p.pub_id = j.at("pub").get<std::string>();
        out.push_back(std::move(p));
    });
    return {std::move(info), std::move(out)};
}

} // namespace scbr::workload
