#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <optional>
#include <random>
#include <vector>

// Simulated V2V state sharing: a per-receiver delayed buffer plus
// message-level dropout and retrieval-time observation noise. The bus is
// in-process; one broadcast round per simulation tick.

namespace cavsim {

struct SharedPayload {
    double x = 0.0;
    double y = 0.0;
    double psi = 0.0;
    double v = 0.0;
    int intended_action = 1;  // canonical action index
    int intent_lane = 0;      // committed target lane of the ongoing maneuver
};

struct TimestampedMessage {
    int sender = 0;
    long tick = 0;
    SharedPayload payload;
};

struct ChannelConfig {
    int t_delay = 1;              // ticks
    double dropout_p = 0.0;       // per-message Bernoulli, in [0, 1)
    double obs_noise_sigma = 0.0; // Gaussian std on numeric payload fields
    std::uint64_t seed = 0;
    bool delay_ego_state = false; // also serve the ego its own state delayed
    bool enabled = true;          // disabled bus delivers nothing after reset
};

// Ring of timestamped messages from one sender. Push requires strictly
// increasing ticks; retrieval returns the newest message no younger than
// t_delay, falling back to the oldest held one during cold start.
class DelayBuffer {
  public:
    explicit DelayBuffer(size_t capacity) : capacity_(capacity) {}

    void push(const TimestampedMessage& msg);
    std::optional<TimestampedMessage> retrieve_delayed(long now, int t_delay) const;

    size_t size() const { return ring_.size(); }
    bool empty() const { return ring_.empty(); }
    long oldest_tick() const { return ring_.front().tick; }
    long newest_tick() const { return ring_.back().tick; }

  private:
    size_t capacity_;
    std::deque<TimestampedMessage> ring_;
};

// One record per sender per round, for the JSONL channel trace.
struct ChannelEvent {
    long tick = 0;
    int sender = 0;
    bool dropped = false;
    long delivered_tick = -1;  // tick a warm receiver retrieves this round
};

class Bus {
  public:
    Bus(int n_agents, const ChannelConfig& cfg);

    // Reset handshake: everyone's initial state reaches everyone, never
    // dropped, so cold-start retrieval has something to serve.
    void seed_initial(const std::vector<SharedPayload>& states);

    // One tick: every active agent broadcasts (subject to dropout), then
    // every receiver retrieves each sender's delayed message with noise
    // applied at retrieval. views[receiver][sender]; the self slot is
    // filled only when delay_ego_state is set.
    std::vector<std::vector<std::optional<SharedPayload>>> round(
        long tick, const std::vector<SharedPayload>& states,
        const std::vector<bool>& active);

    // The two halves of round(), separately: reset-time retrieval uses
    // views() without pushing anything new.
    void push_round(long tick, const std::vector<SharedPayload>& states,
                    const std::vector<bool>& active);
    std::vector<std::vector<std::optional<SharedPayload>>> views(long now);

    // Delayed view for one link without advancing anything (noise-free).
    std::optional<TimestampedMessage> peek(int receiver, int sender, long now) const;

    const std::vector<ChannelEvent>& events() const { return events_; }
    void set_trace(bool on) { trace_ = on; }

    const ChannelConfig& config() const { return cfg_; }

  private:
    SharedPayload noisy(const SharedPayload& p);

    int n_;
    ChannelConfig cfg_;
    std::mt19937_64 rng_;
    // buffers_[receiver][sender]
    std::vector<std::vector<DelayBuffer>> buffers_;
    std::vector<ChannelEvent> events_;
    bool trace_ = false;
};

}  // namespace cavsim
