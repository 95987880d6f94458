#include "scbr/enclave_router.hpp"

#include <algorithm>
#include <functional>
#include <mutex>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

namespace scbr {

struct EnclaveRouter::State {
    std::optional<ProvisioningBlob> secrets;
    std::atomic<std::uint64_t> registered{0};
    std::atomic<std::uint64_t> matched{0};
    std::atomic<std::uint64_t> rejected{0};
    bool over_budget = false;
};

crypto::Bytes attestation_stub(std::string_view code_version, std::uint64_t version) {
    return crypto::sha256(crypto::length_prefixed({code_version, std::to_string(version)}));
}

EnclaveRouter::EnclaveRouter(std::size_t soft_budget_bytes)
    : mu_(std::make_unique<std::shared_mutex>()), state_(std::make_unique<State>()),
      index_(std::make_unique<ContainmentIndex>()), soft_budget_(soft_budget_bytes) {}

EnclaveRouter::~EnclaveRouter() = default;
EnclaveRouter::EnclaveRouter(EnclaveRouter &&) noexcept = default;
EnclaveRouter &EnclaveRouter::operator=(EnclaveRouter &&) noexcept = default;

crypto::Bytes EnclaveRouter::provision(const ProvisioningBlob &blob) {
    std::unique_lock lock(*mu_);
    if (state_->secrets && blob.version <= state_->secrets->version) {
        throw ReplayRejected(fmt::format("provisioning version {} is not newer than {}", blob.version,
                                         state_->secrets->version));
    }
    state_->secrets = blob;
    return attestation_stub(kRouterCodeVersion, blob.version);
}

bool EnclaveRouter::provisioned() const {
    std::shared_lock lock(*mu_);
    return state_->secrets.has_value();
}

void EnclaveRouter::require_provisioned() const {
    if (!state_->secrets) throw NotProvisioned();
}

wire::Record EnclaveRouter::ecall_register(const wire::SubReg &frame) {
    std::unique_lock lock(*mu_);
    require_provisioned();
    const auto &keys = *state_->secrets;
    auto reject = [&](const char *why) -> wire::Record {
        ++state_->rejected;
        return wire::Err{frame.sub, why};
    };

    if (!crypto::verify(keys.publisher_key, wire::subreg_signed_bytes(frame.sub, frame.client, frame.reply, frame.ct),
                        frame.sig)) {
        return reject("sig");
    }

    Subscription sub;
    try {
        const auto plain = crypto::sym_open(keys.sk, crypto::CipherEnvelope::from_bytes(crypto::Scheme::Sym, frame.ct));
        sub = canonicalize(parse_subscription(plain));
        if (sub.constraints.empty()) return reject("format");
    } catch (const crypto::MalformedEnvelope &) {
        return reject("format");
    } catch (const EmptyConstraint &) {
        return reject("empty");
    } catch (const ModelError &) {
        return reject("format");
    }

    try {
        index_->insert(sub, frame.client, frame.sub, frame.reply);
    } catch (const IndexError &) {
        return reject("dup");
    }
    ++state_->registered;
    check_budget();
    return wire::Ack{frame.sub, ""};
}

wire::Record EnclaveRouter::ecall_invalidate(const wire::Unsub &frame) {
    std::unique_lock lock(*mu_);
    require_provisioned();
    if (!crypto::verify(state_->secrets->publisher_key, wire::unsub_signed_bytes(frame.sub), frame.sig)) {
        ++state_->rejected;
        return wire::Err{frame.sub, "sig"};
    }
    if (!index_->remove(frame.sub)) return wire::Ack{frame.sub, "absent"};
    return wire::Ack{frame.sub, ""};
}

std::vector<Route> distinct_routes(const std::vector<ClientRef> &refs) {
    // sort by hash, then compare strings only inside runs of equal hashes
    std::vector<std::pair<std::size_t, const ClientRef *>> keyed;
    keyed.reserve(refs.size());
    const std::hash<std::string_view> hash;
    for (const auto &r : refs) keyed.emplace_back(hash(r.client_id) * 31 + hash(r.reply), &r);
    std::sort(keyed.begin(), keyed.end(), [](const auto &a, const auto &b) { return a.first < b.first; });

    std::vector<Route> out;
    out.reserve(keyed.size());
    for (std::size_t i = 0; i < keyed.size(); ++i) {
        const auto &r = *keyed[i].second;
        bool seen = false;
        for (std::size_t j = i; j-- > 0 && keyed[j].first == keyed[i].first;) {
            const auto &o = *keyed[j].second;
            if (o.client_id == r.client_id && o.reply == r.reply) {
                seen = true;
                break;
            }
        }
        if (!seen) out.push_back({r.client_id, r.reply});
    }
    return out;
}

MatchOutcome EnclaveRouter::ecall_match(const wire::Pub &frame) const {
    std::shared_lock lock(*mu_);
    require_provisioned();
    MatchOutcome out;

    PublicationHeader header;
    try {
        const auto plain =
            crypto::sym_open(state_->secrets->sk, crypto::CipherEnvelope::from_bytes(crypto::Scheme::Sym, frame.hdr));
        header = parse_header(plain);
        validate_header(header);
    } catch (const crypto::MalformedEnvelope &) {
        out.error = wire::Err{frame.pub, "format"};
    } catch (const ModelError &) {
        out.error = wire::Err{frame.pub, "format"};
    }
    if (out.error) {
        ++state_->rejected;
        return out;
    }

    out.routes = distinct_routes(index_->match(header));
    ++state_->matched;
    return out;
}

std::size_t EnclaveRouter::footprint() const {
    std::shared_lock lock(*mu_);
    require_provisioned();
    return index_->footprint_bytes() + kBoundaryBytes;
}

IndexStats EnclaveRouter::stats() const {
    std::shared_lock lock(*mu_);
    return index_->stats();
}

RouterCounters EnclaveRouter::counters() const {
    return {state_->registered.load(), state_->matched.load(), state_->rejected.load()};
}

void EnclaveRouter::check_budget() {
    // called with the write lock held
    const auto bytes = index_->footprint_bytes() + kBoundaryBytes;
    const bool over = bytes > soft_budget_;
    if (over && !state_->over_budget) {
        spdlog::warn("router footprint {} bytes exceeds soft budget of {} bytes", bytes, soft_budget_);
    }
    state_->over_budget = over;
}

} // namespace scbr
