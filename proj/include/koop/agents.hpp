#pragma once

#include <cstdint>
#include <deque>
#include <random>
#include <string>
#include <vector>

#include "koop/common.hpp"
#include "koop/neural.hpp"

namespace koop {

/// Sample-average multi-armed bandit with epsilon-greedy selection.
/// Q(a) tracks the exact arithmetic mean of the rewards observed for a.
class BanditAgent {
public:
    BanditAgent(int n_actions, double epsilon, double q_init = 0.0);

    int n_actions() const { return static_cast<int>(q_.size()); }
    double epsilon() const { return epsilon_; }
    void set_epsilon(double eps);
    const Vector& q() const { return q_; }
    const std::vector<long>& counts() const { return counts_; }

    /// Greedy argmax (lowest index on ties) with probability 1 - epsilon,
    /// uniform otherwise.
    int select(std::mt19937_64& rng) const;
    int select(double epsilon_override, std::mt19937_64& rng) const;

    /// N(a) += 1, then Q(a) += (R - Q(a)) / N(a).
    void update(int action, double reward);

    std::string to_csv() const;  // action,q,n rows with header
    static BanditAgent from_csv(const std::string& text, double epsilon, double q_init = 0.0);

private:
    Vector q_;
    std::vector<long> counts_;
    double epsilon_;
    double q_init_;
};

struct Transition {
    Vector state;
    int action = 0;
    double reward = 0.0;
    Vector next_state;
};

/// Fixed-capacity FIFO of transitions with uniform sampling.
class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);

    std::size_t size() const { return data_.size(); }
    std::size_t capacity() const { return capacity_; }
    const std::deque<Transition>& data() const { return data_; }

    void push(Transition t);  // evicts the oldest at capacity
    std::vector<Transition> sample(int batch, std::mt19937_64& rng) const;  // w/o replacement

    std::string to_json() const;
    static ReplayBuffer from_json(const std::string& text);

private:
    std::size_t capacity_;
    std::deque<Transition> data_;
};

struct DqnConfig {
    std::vector<int> hidden = {128, 128};
    Activation activation = Activation::Relu;
    double lr = 1e-3;
    double gamma = 0.99;
    double tau = 0.05;             // soft target update rate
    double eps_start = 0.9;
    double eps_end = 0.05;
    double eps_decay = 1000.0;     // steps; eps_t = end + (start-end) exp(-t/decay)
    std::size_t replay_capacity = 20000;
    int batch = 64;
    int learn_start = 200;         // transitions observed before updates begin
    double grad_clip = 100.0;
    double huber_delta = 1.0;
};

/// Q-learning on the flattened window state with experience replay and a
/// softly-tracking target network.
class DqnAgent {
public:
    DqnAgent(int state_dim, int n_actions, DqnConfig cfg, std::uint64_t seed);

    const DqnConfig& config() const { return cfg_; }
    int n_actions() const { return n_actions_; }
    Mlp& policy_net() { return policy_; }
    Mlp& target_net() { return target_; }
    const Mlp& policy_net() const { return policy_; }
    const Mlp& target_net() const { return target_; }
    ReplayBuffer& replay() { return replay_; }
    const ReplayBuffer& replay() const { return replay_; }

    double epsilon_at(long t) const;
    int greedy_action(const Vector& state) const;
    int select(const Vector& state, long t, std::mt19937_64& rng) const;

    void observe(Transition t) { replay_.push(std::move(t)); }
    bool ready() const;

    /// One TD step on a sampled minibatch followed by the soft target update.
    void update(std::mt19937_64& rng);
    /// Same, on a caller-supplied minibatch (must be non-empty).
    void update_on(const std::vector<Transition>& minibatch);

    std::string to_json() const;  // nets + optimizer + replay + hyperparameters
    static DqnAgent from_json(const std::string& text);

private:
    DqnConfig cfg_;
    int state_dim_;
    int n_actions_;
    Mlp policy_;
    Mlp target_;
    OptimizerState opt_;
    ReplayBuffer replay_;
};

/// Generalized advantage estimation. `values` holds V(s_0..s_T) (length
/// T + 1); computed by the backward recursion A_t = delta_t + gamma lambda
/// A_{t+1} with delta_t = r_t + gamma V_{t+1} - V_t.
Vector gae(const Vector& rewards, const Vector& values, double gamma, double lambda);

/// Clipped-surrogate loss (negated for minimization) and its gradient with
/// respect to the new log-probabilities. Samples on the saturated,
/// non-improving side of the clip contribute exactly zero gradient.
std::pair<double, Vector> ppo_objective(const Vector& old_logprobs, const Vector& new_logprobs,
                                        const Vector& advantages, double clip_eps);

struct PpoConfig {
    std::vector<int> hidden = {64, 64};  // tanh actor and critic towers
    double actor_lr = 3e-4;
    double critic_lr = 3e-4;
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double clip_eps = 0.2;
    int epochs_k = 4;
    int batch_n = 64;        // rollout length per update
    int minibatch = 64;      // rows per gradient step within an epoch
    bool normalize_advantages = true;
};

struct PpoStepData {
    int action = 0;
    double logprob = 0.0;
    double value = 0.0;
};

struct PpoTransition {
    Vector state;
    int action = 0;
    double logprob = 0.0;
    double value = 0.0;
    double reward = 0.0;
    Vector next_state;
};

/// On-policy actor-critic with the clipped surrogate objective.
class PpoAgent {
public:
    PpoAgent(int state_dim, int n_actions, PpoConfig cfg, std::uint64_t seed);

    const PpoConfig& config() const { return cfg_; }
    int n_actions() const { return n_actions_; }
    Mlp& actor() { return actor_; }
    Mlp& critic() { return critic_; }
    const Mlp& actor() const { return actor_; }
    const Mlp& critic() const { return critic_; }
    const std::vector<PpoTransition>& buffer() const { return buffer_; }

    /// Categorical action probabilities (softmax of actor logits).
    Vector action_probabilities(const Vector& state) const;
    PpoStepData act(const Vector& state, std::mt19937_64& rng) const;
    double value(const Vector& state) const;

    void observe(PpoTransition t) { buffer_.push_back(std::move(t)); }
    bool batch_ready() const { return static_cast<int>(buffer_.size()) >= cfg_.batch_n; }

    /// GAE over the buffered rollout, then K epochs of clipped-surrogate
    /// ascent and critic MSE descent; clears the buffer.
    void update(std::mt19937_64& rng);

    std::string to_json() const;
    static PpoAgent from_json(const std::string& text);

private:
    PpoConfig cfg_;
    int state_dim_;
    int n_actions_;
    Mlp actor_;
    Mlp critic_;
    OptimizerState actor_opt_;
    OptimizerState critic_opt_;
    std::vector<PpoTransition> buffer_;
};

}  // namespace koop
