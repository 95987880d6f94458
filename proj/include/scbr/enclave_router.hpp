#pragma once

#include "scbr/containment_index.hpp"
#include "scbr/crypto.hpp"
#include "scbr/wire.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace scbr {

class RouterError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class NotProvisioned : public RouterError {
public:
    NotProvisioned() : RouterError("router has not been provisioned") {}
};

class ReplayRejected : public RouterError {
public:
    using RouterError::RouterError;
};

/// Secrets handed to the trusted boundary at startup.
struct ProvisioningBlob {
    crypto::SymKey sk;
    crypto::PublicKey publisher_key;
    std::uint64_t version = 0;
};

/// Where a matching publication goes. This is all that leaves the boundary.
struct Route {
    std::string client_id;
    std::string reply_addr;

    friend auto operator<=>(const Route &, const Route &) = default;
    friend bool operator==(const Route &, const Route &) = default;
};

/// Distinct (client, reply) destinations among `refs`, in no particular order.
std::vector<Route> distinct_routes(const std::vector<ClientRef> &refs);

struct MatchOutcome {
    std::vector<Route> routes;
    std::optional<wire::Err> error;

    bool ok() const noexcept { return !error.has_value(); }
};

struct RouterCounters {
    std::uint64_t registered = 0;
    std::uint64_t matched = 0;
    std::uint64_t rejected = 0;
};

inline constexpr std::string_view kRouterCodeVersion = "scbr-router/1";
/// Fixed cost charged to the boundary itself (code, stacks, key schedule).
inline constexpr std::size_t kBoundaryBytes = 256 * 1024;
inline constexpr std::size_t kDefaultSoftBudget = 90u * 1024 * 1024;

/// The simulated trusted boundary. It owns the symmetric key, the publisher's
/// verification key and the containment index. Calls take and return wire
/// records or routing metadata; nothing that leaves it carries key material
/// or a plaintext subscription or header.
///
/// Mutating calls are serialized internally; ecall_match may run concurrently
/// with other ecall_match calls.
class EnclaveRouter {
public:
    explicit EnclaveRouter(std::size_t soft_budget_bytes = kDefaultSoftBudget);
    ~EnclaveRouter();
    EnclaveRouter(EnclaveRouter &&) noexcept;
    EnclaveRouter &operator=(EnclaveRouter &&) noexcept;

    /// Installs or replaces the secrets. The version must exceed the last one
    /// accepted, otherwise ReplayRejected. Returns the attestation stub.
    crypto::Bytes provision(const ProvisioningBlob &blob);

    bool provisioned() const;

    /// ACK(ref=sub) or ERR(ref=sub, msg in {"sig","format","empty","dup"}).
    wire::Record ecall_register(const wire::SubReg &frame);

    /// ACK(ref=sub), msg "absent" when the id was not registered; ERR("sig").
    wire::Record ecall_invalidate(const wire::Unsub &frame);

    /// Routes for every registered subscription matching the sealed header,
    /// without duplicates, in no particular order. A header that does not open to a
    /// canonical header gives ERR(ref=pub, "format").
    MatchOutcome ecall_match(const wire::Pub &frame) const;

    std::size_t footprint() const;
    IndexStats stats() const;
    RouterCounters counters() const;

private:
    struct State;

    void require_provisioned() const;
    void check_budget();

    std::unique_ptr<std::shared_mutex> mu_;
    std::unique_ptr<State> state_;
    std::unique_ptr<ContainmentIndex> index_;
    std::size_t soft_budget_;
};

/// SHA-256 over the length-prefixed code version and the decimal version.
crypto::Bytes attestation_stub(std::string_view code_version, std::uint64_t version);

} // namespace scbr
