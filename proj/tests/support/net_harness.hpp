#pragma once

#include "scbr/net.hpp"
#include "support/generators.hpp"

#include <fmt/format.h>

#include <chrono>
#include <condition_variable>
#include <map>
#include <memory>
#include <mutex>
#include <random>
#include <set>
#include <string>
#include <vector>

namespace scbr::testing {

/// Thread-safe record of the DELIVER frames a subscriber received.
class Inbox {
public:
    void push(const wire::Deliver &d) {
        {
            std::lock_guard lock(mu_);
            got_.push_back(d);
        }
        cv_.notify_all();
    }

    bool wait_for(std::size_t n, std::chrono::milliseconds timeout = std::chrono::milliseconds(5000)) {
        std::unique_lock lock(mu_);
        return cv_.wait_for(lock, timeout, [&] { return got_.size() >= n; });
    }

    std::vector<wire::Deliver> snapshot() const {
        std::lock_guard lock(mu_);
        return got_;
    }

    std::size_t size() const {
        std::lock_guard lock(mu_);
        return got_.size();
    }

private:
    mutable std::mutex mu_;
    std::condition_variable cv_;
    std::vector<wire::Deliver> got_;
};

/// Broker and publisher on loopback ports, sharing one set of keys.
struct Deployment {
    net::PublisherKeys keys = net::PublisherKeys::generate();
    net::Broker broker{keys.provisioning(1)};
    std::unique_ptr<net::Publisher> publisher;

    Deployment() {
        broker.start();
        publisher = std::make_unique<net::Publisher>(keys, broker.endpoint());
        publisher->start();
    }

    net::Producer producer() const { return net::Producer(keys.sk, broker.endpoint()); }
};

struct ClientSlot {
    std::string id;
    std::shared_ptr<Inbox> inbox = std::make_shared<Inbox>();
    std::unique_ptr<net::Subscriber> sub;
};

struct ScriptResult {
    std::size_t publications = 0;
    std::size_t deliveries = 0;
    std::vector<std::string> deviations;
};

/// One randomized subscribe -> admit -> register -> publish -> deliver script,
/// then an invalidation round. Every delivery is compared against the
/// plaintext oracle's client set and the original payload bytes.
inline ScriptResult run_script(Deployment &dep, std::uint64_t seed, const std::string &tag) {
    std::mt19937_64 rng(seed);
    ScriptResult res;
    auto producer = dep.producer();

    std::vector<ClientSlot> clients(static_cast<std::size_t>(uniform_int(rng, 2, 5)));
    for (std::size_t i = 0; i < clients.size(); ++i) {
        auto &c = clients[i];
        c.id = tag + "-c" + std::to_string(i);
        dep.publisher->policy().allow(c.id);
        c.sub = std::make_unique<net::Subscriber>(c.id, dep.keys.box.public_key,
                                                  [inbox = c.inbox](const wire::Deliver &d) { inbox->push(d); });
    }

    struct Held {
        std::size_t client;
        std::string sub_id;
        Subscription sub;
    };
    std::vector<Held> held;
    for (std::size_t i = 0; i < clients.size(); ++i) {
        const int n = uniform_int(rng, 1, 3);
        for (int k = 0; k < n; ++k) {
            auto s = random_subscription(rng, 3, 1);
            const auto id = clients[i].sub->subscribe(serialize(s), dep.publisher->endpoint());
            held.push_back({i, id, std::move(s)});
        }
    }

    std::vector<std::size_t> expected(clients.size(), 0);
    auto round = [&](int n_pubs) {
        for (int p = 0; p < n_pubs; ++p) {
            auto header = random_header(rng);
            while (header.empty()) header = random_header(rng);
            crypto::Bytes payload = crypto::random_bytes(static_cast<std::size_t>(uniform_int(rng, 0, 300)));
            std::set<std::size_t> oracle;
            for (const auto &h : held)
                if (matches(header, h.sub)) oracle.insert(h.client);

            const auto before = dep.broker.counters().delivered;
            const auto pub_id = producer.publish(header, payload);
            const auto sent = dep.broker.counters().delivered - before;
            ++res.publications;
            if (sent != oracle.size())
                res.deviations.push_back(
                    fmt::format("{}: broker sent {} deliveries, oracle expects {}", pub_id, sent, oracle.size()));
            for (auto c : oracle) {
                ++expected[c];
                if (!clients[c].inbox->wait_for(expected[c])) {
                    res.deviations.push_back(fmt::format("{}: {} never received it", pub_id, clients[c].id));
                    continue;
                }
                const auto got = clients[c].inbox->snapshot();
                const auto &last = got[expected[c] - 1];
                if (last.pub != pub_id || last.payload != payload)
                    res.deviations.push_back(fmt::format("{}: {} got {} or altered bytes", pub_id, clients[c].id, last.pub));
                ++res.deliveries;
            }
        }
    };

    round(uniform_int(rng, 3, 8));

    // invalidate roughly half, then publish again against the survivors
    std::vector<Held> kept;
    for (auto &h : held) {
        if (coin(rng)) {
            clients[h.client].sub->unsubscribe(h.sub_id, dep.publisher->endpoint());
        } else {
            kept.push_back(std::move(h));
        }
    }
    held = std::move(kept);
    round(uniform_int(rng, 3, 8));

    for (std::size_t c = 0; c < clients.size(); ++c)
        if (clients[c].inbox->size() != expected[c])
            res.deviations.push_back(fmt::format("{} received {} frames, expected {}", clients[c].id,
                                                 clients[c].inbox->size(), expected[c]));
    for (const auto &h : held) clients[h.client].sub->unsubscribe(h.sub_id, dep.publisher->endpoint());
    return res;
}

} // namespace scbr::testing
