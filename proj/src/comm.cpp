#include "cavsim/comm.hpp"

#include <stdexcept>

namespace cavsim {

void DelayBuffer::push(const TimestampedMessage& msg) {
    if (!ring_.empty() && msg.tick <= ring_.back().tick) {
        throw std::invalid_argument("DelayBuffer::push: out-of-order tick");
    }
    ring_.push_back(msg);
    if (ring_.size() > capacity_) ring_.pop_front();
}

std::optional<TimestampedMessage> DelayBuffer::retrieve_delayed(
    long now, int t_delay) const {
    if (ring_.empty()) return std::nullopt;
    const long want = now - t_delay;
    // Newest message with tick <= want; cold start falls back to oldest.
    const TimestampedMessage* best = nullptr;
    for (const auto& m : ring_) {
        if (m.tick <= want) best = &m;
        else break;
    }
    if (!best) best = &ring_.front();
    return *best;
}

Bus::Bus(int n_agents, const ChannelConfig& cfg)
    : n_(n_agents), cfg_(cfg), rng_(cfg.seed) {
    const size_t cap = static_cast<size_t>(cfg.t_delay) + 2;
    buffers_.reserve(n_);
    for (int r = 0; r < n_; ++r) {
        buffers_.emplace_back(std::vector<DelayBuffer>(n_, DelayBuffer(cap)));
    }
}

void Bus::seed_initial(const std::vector<SharedPayload>& states) {
    for (int s = 0; s < n_; ++s) {
        TimestampedMessage msg{s, 0, states[s]};
        for (int r = 0; r < n_; ++r) buffers_[r][s].push(msg);
    }
}

SharedPayload Bus::noisy(const SharedPayload& p) {
    if (cfg_.obs_noise_sigma <= 0.0) return p;
    std::normal_distribution<double> g(0.0, cfg_.obs_noise_sigma);
    SharedPayload q = p;
    q.x += g(rng_);
    q.y += g(rng_);
    q.psi += g(rng_);
    q.v += g(rng_);
    return q;
}

void Bus::push_round(long tick, const std::vector<SharedPayload>& states,
                     const std::vector<bool>& active) {
    std::bernoulli_distribution drop(cfg_.dropout_p);
    for (int s = 0; s < n_; ++s) {
        if (!active[s]) continue;
        bool dropped = !cfg_.enabled;
        if (cfg_.enabled && cfg_.dropout_p > 0.0) dropped = drop(rng_);
        if (!dropped) {
            TimestampedMessage msg{s, tick, states[s]};
            for (int r = 0; r < n_; ++r) buffers_[r][s].push(msg);
        }
        if (trace_) {
            ChannelEvent ev;
            ev.tick = tick;
            ev.sender = s;
            ev.dropped = dropped;
            auto got = buffers_[0][s].retrieve_delayed(tick, cfg_.t_delay);
            ev.delivered_tick = got ? got->tick : -1;
            events_.push_back(ev);
        }
    }
}

std::vector<std::vector<std::optional<SharedPayload>>> Bus::views(long now) {
    std::vector<std::vector<std::optional<SharedPayload>>> out(
        n_, std::vector<std::optional<SharedPayload>>(n_));
    for (int r = 0; r < n_; ++r) {
        for (int s = 0; s < n_; ++s) {
            if (s == r && !cfg_.delay_ego_state) continue;
            auto got = buffers_[r][s].retrieve_delayed(now, cfg_.t_delay);
            if (got) out[r][s] = noisy(got->payload);
        }
    }
    return out;
}

std::vector<std::vector<std::optional<SharedPayload>>> Bus::round(
    long tick, const std::vector<SharedPayload>& states,
    const std::vector<bool>& active) {
    push_round(tick, states, active);
    return views(tick);
}

std::optional<TimestampedMessage> Bus::peek(int receiver, int sender,
                                            long now) const {
    return buffers_[receiver][sender].retrieve_delayed(now, cfg_.t_delay);
}

}  // namespace cavsim
