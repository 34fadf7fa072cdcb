#include "koop/agents.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <nlohmann/json.hpp>

#include "koop/errors.hpp"
#include "koop/rng.hpp"

namespace koop {

using nlohmann::json;

namespace {

int argmax_lowest(const Vector& v) {
    int best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v(i) > v(best)) best = static_cast<int>(i);
    return best;
}

json vec_to_json(const Vector& v) {
    json arr = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
    return arr;
}

Vector vec_from_json(const json& arr) {
    Vector v(static_cast<Eigen::Index>(arr.size()));
    for (std::size_t i = 0; i < arr.size(); ++i)
        v(static_cast<Eigen::Index>(i)) = arr[i].get<double>();
    return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// Bandit
// ---------------------------------------------------------------------------

BanditAgent::BanditAgent(int n_actions, double epsilon, double q_init)
    : q_(Vector::Constant(n_actions, q_init)),
      counts_(static_cast<std::size_t>(n_actions), 0),
      epsilon_(epsilon),
      q_init_(q_init) {
    if (n_actions < 1) throw ConfigError("bandit needs at least one action");
    set_epsilon(epsilon);
}

void BanditAgent::set_epsilon(double eps) {
    if (eps < 0.0 || eps > 1.0) throw ConfigError("epsilon must lie in [0, 1]");
    epsilon_ = eps;
}

int BanditAgent::select(std::mt19937_64& rng) const { return select(epsilon_, rng); }

int BanditAgent::select(double epsilon_override, std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(rng) < epsilon_override) {
        std::uniform_int_distribution<int> pick(0, n_actions() - 1);
        return pick(rng);
    }
    return argmax_lowest(q_);
}

void BanditAgent::update(int action, double reward) {
    if (action < 0 || action >= n_actions())
        throw ActionOutOfRange("bandit update for action " + std::to_string(action));
    if (!std::isfinite(reward)) throw InvalidInput("bandit reward must be finite");
    auto& n = counts_[static_cast<std::size_t>(action)];
    n += 1;
    q_(action) += (reward - q_(action)) / static_cast<double>(n);
}

std::string BanditAgent::to_csv() const {
    std::ostringstream out;
    out.precision(17);
    out << "action,q,n\n";
    for (int a = 0; a < n_actions(); ++a)
        out << a << ',' << q_(a) << ',' << counts_[static_cast<std::size_t>(a)] << '\n';
    return out.str();
}

BanditAgent BanditAgent::from_csv(const std::string& text, double epsilon, double q_init) {
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line.rfind("action,q,n", 0) != 0)
        throw IoError("bandit csv missing 'action,q,n' header");
    std::vector<double> qs;
    std::vector<long> ns;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string field;
        std::getline(row, field, ',');  // action index, implied by order
        if (!std::getline(row, field, ',')) throw IoError("bandit csv row missing q");
        qs.push_back(std::stod(field));
        if (!std::getline(row, field, ',')) throw IoError("bandit csv row missing n");
        ns.push_back(std::stol(field));
    }
    if (qs.empty()) throw IoError("bandit csv has no rows");
    BanditAgent agent(static_cast<int>(qs.size()), epsilon, q_init);
    for (std::size_t a = 0; a < qs.size(); ++a) {
        agent.q_(static_cast<Eigen::Index>(a)) = qs[a];
        agent.counts_[a] = ns[a];
    }
    return agent;
}

// ---------------------------------------------------------------------------
// Replay buffer
// ---------------------------------------------------------------------------

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity < 1) throw ConfigError("replay capacity must be >= 1");
}

void ReplayBuffer::push(Transition t) {
    data_.push_back(std::move(t));
    while (data_.size() > capacity_) data_.pop_front();
}

std::vector<Transition> ReplayBuffer::sample(int batch, std::mt19937_64& rng) const {
    if (batch < 1) throw InvalidInput("batch size must be >= 1");
    if (static_cast<std::size_t>(batch) > data_.size())
        throw InsufficientData("replay holds " + std::to_string(data_.size()) +
                               " transitions, need " + std::to_string(batch));
    std::vector<Transition> out;
    out.reserve(static_cast<std::size_t>(batch));
    std::sample(data_.begin(), data_.end(), std::back_inserter(out), batch, rng);
    return out;
}

std::string ReplayBuffer::to_json() const {
    json j;
    j["version"] = 1;
    j["capacity"] = capacity_;
    json items = json::array();
    for (const Transition& t : data_) {
        json item;
        item["s"] = vec_to_json(t.state);
        item["a"] = t.action;
        item["r"] = t.reward;
        item["s2"] = vec_to_json(t.next_state);
        items.push_back(std::move(item));
    }
    j["transitions"] = std::move(items);
    return j.dump();
}

ReplayBuffer ReplayBuffer::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("invalid replay json: ") + e.what());
    }
    if (j.value("version", 0) != 1) throw IoError("unsupported replay buffer version");
    ReplayBuffer buf(j.at("capacity").get<std::size_t>());
    for (const auto& item : j.at("transitions")) {
        Transition t;
        t.state = vec_from_json(item.at("s"));
        t.action = item.at("a").get<int>();
        t.reward = item.at("r").get<double>();
        t.next_state = vec_from_json(item.at("s2"));
        buf.push(std::move(t));
    }
    return buf;
}

// ---------------------------------------------------------------------------
// DQN
// ---------------------------------------------------------------------------

namespace {

std::vector<int> net_sizes(int in, const std::vector<int>& hidden, int out) {
    // Runs inside the member-init list, before the constructor bodies get a
    // chance to validate: bad dimensions must still read as config errors.
    if (in < 1) throw ConfigError("agent state dimension must be >= 1");
    if (out < 1) throw ConfigError("agent needs at least one action");
    std::vector<int> sizes;
    sizes.push_back(in);
    for (int h : hidden) sizes.push_back(h);
    sizes.push_back(out);
    return sizes;
}

}  // namespace

DqnAgent::DqnAgent(int state_dim, int n_actions, DqnConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      state_dim_(state_dim),
      n_actions_(n_actions),
      policy_(net_sizes(state_dim, cfg_.hidden, n_actions), cfg_.activation,
              rng::substream(seed, rng::Stream::NetInit, 0)),
      target_(policy_),
      opt_(OptimizerState::adam(policy_, cfg_.lr)),
      replay_(cfg_.replay_capacity) {
    if (n_actions < 1) throw ConfigError("dqn needs at least one action");
    if (cfg_.batch < 1) throw ConfigError("dqn batch must be >= 1");
    if (cfg_.gamma < 0.0 || cfg_.gamma >= 1.0) throw ConfigError("dqn gamma must be in [0, 1)");
}

double DqnAgent::epsilon_at(long t) const {
    return cfg_.eps_end +
           (cfg_.eps_start - cfg_.eps_end) * std::exp(-static_cast<double>(t) / cfg_.eps_decay);
}

int DqnAgent::greedy_action(const Vector& state) const {
    Matrix row(1, state.size());
    row.row(0) = state.transpose();
    return argmax_lowest(policy_.forward_const(row).row(0).transpose());
}

int DqnAgent::select(const Vector& state, long t, std::mt19937_64& rng) const {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    if (unit(rng) < epsilon_at(t)) {
        std::uniform_int_distribution<int> pick(0, n_actions_ - 1);
        return pick(rng);
    }
    return greedy_action(state);
}

bool DqnAgent::ready() const {
    return replay_.size() >= static_cast<std::size_t>(std::max(cfg_.batch, cfg_.learn_start));
}

void DqnAgent::update(std::mt19937_64& rng) { update_on(replay_.sample(cfg_.batch, rng)); }

void DqnAgent::update_on(const std::vector<Transition>& minibatch) {
    const auto b = static_cast<Eigen::Index>(minibatch.size());
    if (b < 1) throw InsufficientData("dqn update needs a non-empty minibatch");
    Matrix states(b, state_dim_), next_states(b, state_dim_);
    Vector rewards(b);
    std::vector<int> actions(static_cast<std::size_t>(b));
    for (Eigen::Index i = 0; i < b; ++i) {
        const Transition& t = minibatch[static_cast<std::size_t>(i)];
        states.row(i) = t.state.transpose();
        next_states.row(i) = t.next_state.transpose();
        rewards(i) = t.reward;
        actions[static_cast<std::size_t>(i)] = t.action;
    }

    // Targets come from the frozen copy; no gradient flows through it.
    const Matrix q_next = target_.forward_const(next_states);
    Vector targets(b);
    for (Eigen::Index i = 0; i < b; ++i)
        targets(i) = rewards(i) + cfg_.gamma * q_next.row(i).maxCoeff();

    const Matrix q_all = policy_.forward(states);
    Vector q_chosen(b);
    for (Eigen::Index i = 0; i < b; ++i)
        q_chosen(i) = q_all(i, actions[static_cast<std::size_t>(i)]);

    const auto [loss, grad] = huber_loss(q_chosen, targets, cfg_.huber_delta);
    (void)loss;
    Matrix loss_grad = Matrix::Zero(b, n_actions_);
    for (Eigen::Index i = 0; i < b; ++i)
        loss_grad(i, actions[static_cast<std::size_t>(i)]) = grad(i);

    MlpGradients grads = policy_.backward(loss_grad);
    clip_gradients(grads, cfg_.grad_clip);
    optimizer_step(policy_, grads, opt_);
    soft_update(target_, policy_, cfg_.tau);
}

std::string DqnAgent::to_json() const {
    json j;
    j["version"] = 1;
    j["state_dim"] = state_dim_;
    j["n_actions"] = n_actions_;
    json hyper;
    hyper["hidden"] = cfg_.hidden;
    hyper["activation"] = activation_name(cfg_.activation);
    hyper["lr"] = cfg_.lr;
    hyper["gamma"] = cfg_.gamma;
    hyper["tau"] = cfg_.tau;
    hyper["eps_start"] = cfg_.eps_start;
    hyper["eps_end"] = cfg_.eps_end;
    hyper["eps_decay"] = cfg_.eps_decay;
    hyper["replay_capacity"] = cfg_.replay_capacity;
    hyper["batch"] = cfg_.batch;
    hyper["learn_start"] = cfg_.learn_start;
    hyper["grad_clip"] = cfg_.grad_clip;
    hyper["huber_delta"] = cfg_.huber_delta;
    j["hyper"] = std::move(hyper);
    j["policy"] = json::parse(policy_.to_json());
    j["target"] = json::parse(target_.to_json());
    j["optimizer"] = json::parse(optimizer_to_json(opt_));
    j["replay"] = json::parse(replay_.to_json());
    return j.dump();
}

DqnAgent DqnAgent::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("invalid dqn json: ") + e.what());
    }
    if (j.value("version", 0) != 1) throw IoError("unsupported dqn checkpoint version");
    const json& hyper = j.at("hyper");
    DqnConfig cfg;
    cfg.hidden = hyper.at("hidden").get<std::vector<int>>();
    cfg.activation = activation_from_name(hyper.at("activation").get<std::string>());
    cfg.lr = hyper.at("lr").get<double>();
    cfg.gamma = hyper.at("gamma").get<double>();
    cfg.tau = hyper.at("tau").get<double>();
    cfg.eps_start = hyper.at("eps_start").get<double>();
    cfg.eps_end = hyper.at("eps_end").get<double>();
    cfg.eps_decay = hyper.at("eps_decay").get<double>();
    cfg.replay_capacity = hyper.at("replay_capacity").get<std::size_t>();
    cfg.batch = hyper.at("batch").get<int>();
    cfg.learn_start = hyper.at("learn_start").get<int>();
    cfg.grad_clip = hyper.at("grad_clip").get<double>();
    cfg.huber_delta = hyper.at("huber_delta").get<double>();
    DqnAgent agent(j.at("state_dim").get<int>(), j.at("n_actions").get<int>(), cfg, 0);
    agent.policy_ = Mlp::from_json(j.at("policy").dump());
    agent.target_ = Mlp::from_json(j.at("target").dump());
    agent.opt_ = optimizer_from_json(agent.policy_, j.at("optimizer").dump());
    agent.replay_ = ReplayBuffer::from_json(j.at("replay").dump());
    return agent;
}

// ---------------------------------------------------------------------------
// GAE and the clipped surrogate
// ---------------------------------------------------------------------------

Vector gae(const Vector& rewards, const Vector& values, double gamma, double lambda) {
    const auto T = rewards.size();
    if (values.size() != T + 1)
        throw ShapeMismatch("gae needs values of length T + 1 for T rewards");
    Vector adv(T);
    double running = 0.0;
    for (Eigen::Index t = T - 1; t >= 0; --t) {
        const double delta = rewards(t) + gamma * values(t + 1) - values(t);
        running = delta + gamma * lambda * running;
        adv(t) = running;
    }
    return adv;
}

std::pair<double, Vector> ppo_objective(const Vector& old_logprobs, const Vector& new_logprobs,
                                        const Vector& advantages, double clip_eps) {
    const auto n = old_logprobs.size();
    if (new_logprobs.size() != n || advantages.size() != n)
        throw ShapeMismatch("ppo_objective inputs must have equal lengths");
    if (n < 1) throw InvalidInput("ppo_objective needs at least one sample");
    const double inv_n = 1.0 / static_cast<double>(n);
    double objective = 0.0;
    Vector grad = Vector::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double ratio = std::exp(new_logprobs(i) - old_logprobs(i));
        const double a = advantages(i);
        const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * a;
        const double raw = ratio * a;
        objective += std::min(raw, clipped) * inv_n;
        // Gradient of the surrogate wrt the new log-prob is ratio * a unless
        // the sample sits strictly on the saturated, non-improving side.
        const bool saturated =
            (a > 0.0 && ratio > 1.0 + clip_eps) || (a < 0.0 && ratio < 1.0 - clip_eps);
        if (!saturated) grad(i) = -raw * inv_n;  // negated: loss = -objective
    }
    return {-objective, grad};
}

// ---------------------------------------------------------------------------
// PPO
// ---------------------------------------------------------------------------

PpoAgent::PpoAgent(int state_dim, int n_actions, PpoConfig cfg, std::uint64_t seed)
    : cfg_(std::move(cfg)),
      state_dim_(state_dim),
      n_actions_(n_actions),
      actor_(net_sizes(state_dim, cfg_.hidden, n_actions), Activation::Tanh,
             rng::substream(seed, rng::Stream::NetInit, 1)),
      critic_(net_sizes(state_dim, cfg_.hidden, 1), Activation::Tanh,
              rng::substream(seed, rng::Stream::NetInit, 2)),
      actor_opt_(OptimizerState::adam(actor_, cfg_.actor_lr)),
      critic_opt_(OptimizerState::adam(critic_, cfg_.critic_lr)) {
    if (n_actions < 1) throw ConfigError("ppo needs at least one action");
    if (cfg_.batch_n < 1) throw ConfigError("ppo batch_n must be >= 1");
    if (cfg_.epochs_k < 0) throw ConfigError("ppo epochs_k must be nonnegative");
    if (cfg_.clip_eps <= 0.0) throw ConfigError("ppo clip_eps must be positive");
}

Vector PpoAgent::action_probabilities(const Vector& state) const {
    Matrix row(1, state.size());
    row.row(0) = state.transpose();
    Vector logits = actor_.forward_const(row).row(0).transpose();
    logits.array() -= logits.maxCoeff();  // stable softmax
    Vector probs = logits.array().exp();
    probs /= probs.sum();
    return probs;
}

PpoStepData PpoAgent::act(const Vector& state, std::mt19937_64& rng) const {
    const Vector probs = action_probabilities(state);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    const double u = unit(rng);
    double cum = 0.0;
    int action = n_actions_ - 1;
    for (int a = 0; a < n_actions_; ++a) {
        cum += probs(a);
        if (u < cum) {
            action = a;
            break;
        }
    }
    PpoStepData out;
    out.action = action;
    out.logprob = std::log(probs(action));
    out.value = value(state);
    return out;
}

double PpoAgent::value(const Vector& state) const {
    Matrix row(1, state.size());
    row.row(0) = state.transpose();
    return critic_.forward_const(row)(0, 0);
}

void PpoAgent::update(std::mt19937_64& rng) {
    const auto T = static_cast<Eigen::Index>(buffer_.size());
    if (T < 1) throw InsufficientData("ppo update with an empty rollout");

    Vector rewards(T), values(T + 1), old_logprobs(T);
    Matrix states(T, state_dim_);
    std::vector<int> actions(static_cast<std::size_t>(T));
    for (Eigen::Index i = 0; i < T; ++i) {
        const PpoTransition& t = buffer_[static_cast<std::size_t>(i)];
        rewards(i) = t.reward;
        values(i) = t.value;
        old_logprobs(i) = t.logprob;
        states.row(i) = t.state.transpose();
        actions[static_cast<std::size_t>(i)] = t.action;
    }
    values(T) = value(buffer_.back().next_state);  // bootstrap

    Vector adv = gae(rewards, values, cfg_.gamma, cfg_.gae_lambda);
    const Vector returns = adv + values.head(T);
    if (cfg_.normalize_advantages && T >= 2) {
        const double mean = adv.mean();
        const double sd = std::sqrt((adv.array() - mean).square().mean());
        if (sd > 1e-12) adv = (adv.array() - mean) / (sd + 1e-8);
        else adv.array() -= mean;
    }

    std::vector<Eigen::Index> order(static_cast<std::size_t>(T));
    std::iota(order.begin(), order.end(), 0);
    const int mb = std::max(1, std::min(cfg_.minibatch, static_cast<int>(T)));
    for (int epoch = 0; epoch < cfg_.epochs_k; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        for (Eigen::Index start = 0; start < T; start += mb) {
            const Eigen::Index count = std::min<Eigen::Index>(mb, T - start);
            Matrix s(count, state_dim_);
            Vector old_b(count), adv_b(count), ret_b(count);
            std::vector<int> act_b(static_cast<std::size_t>(count));
            for (Eigen::Index r = 0; r < count; ++r) {
                const Eigen::Index src = order[static_cast<std::size_t>(start + r)];
                s.row(r) = states.row(src);
                old_b(r) = old_logprobs(src);
                adv_b(r) = adv(src);
                ret_b(r) = returns(src);
                act_b[static_cast<std::size_t>(r)] = actions[static_cast<std::size_t>(src)];
            }

            // Actor: clipped surrogate through a categorical softmax head.
            Matrix logits = actor_.forward(s);
            Matrix probs(count, n_actions_);
            Vector new_logprobs(count);
            for (Eigen::Index r = 0; r < count; ++r) {
                Vector row = logits.row(r).transpose();
                row.array() -= row.maxCoeff();
                Vector e = row.array().exp();
                const double z = e.sum();
                probs.row(r) = (e / z).transpose();
                new_logprobs(r) =
                    row(act_b[static_cast<std::size_t>(r)]) - std::log(z);
            }
            const auto [actor_loss, dnew] =
                ppo_objective(old_b, new_logprobs, adv_b, cfg_.clip_eps);
            (void)actor_loss;
            Matrix dlogits = Matrix::Zero(count, n_actions_);
            for (Eigen::Index r = 0; r < count; ++r) {
                dlogits.row(r) = -dnew(r) * probs.row(r);
                dlogits(r, act_b[static_cast<std::size_t>(r)]) += dnew(r);
            }
            optimizer_step(actor_, actor_.backward(dlogits), actor_opt_);

            // Critic: plain MSE toward the GAE returns.
            const Matrix pred = critic_.forward(s);
            Matrix dpred(count, 1);
            dpred.col(0) = 2.0 * (pred.col(0) - ret_b) / static_cast<double>(count);
            optimizer_step(critic_, critic_.backward(dpred), critic_opt_);
        }
    }
    buffer_.clear();
}

std::string PpoAgent::to_json() const {
    json j;
    j["version"] = 1;
    j["state_dim"] = state_dim_;
    j["n_actions"] = n_actions_;
    json hyper;
    hyper["hidden"] = cfg_.hidden;
    hyper["actor_lr"] = cfg_.actor_lr;
    hyper["critic_lr"] = cfg_.critic_lr;
    hyper["gamma"] = cfg_.gamma;
    hyper["gae_lambda"] = cfg_.gae_lambda;
    hyper["clip_eps"] = cfg_.clip_eps;
    hyper["epochs_k"] = cfg_.epochs_k;
    hyper["batch_n"] = cfg_.batch_n;
    hyper["minibatch"] = cfg_.minibatch;
    hyper["normalize_advantages"] = cfg_.normalize_advantages;
    j["hyper"] = std::move(hyper);
    j["actor"] = json::parse(actor_.to_json());
    j["critic"] = json::parse(critic_.to_json());
    j["actor_optimizer"] = json::parse(optimizer_to_json(actor_opt_));
    j["critic_optimizer"] = json::parse(optimizer_to_json(critic_opt_));
    json rollout = json::array();
    for (const PpoTransition& t : buffer_) {
        json item;
        item["s"] = vec_to_json(t.state);
        item["a"] = t.action;
        item["logprob"] = t.logprob;
        item["value"] = t.value;
        item["r"] = t.reward;
        item["s2"] = vec_to_json(t.next_state);
        rollout.push_back(std::move(item));
    }
    j["rollout"] = std::move(rollout);
    return j.dump();
}

PpoAgent PpoAgent::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw IoError(std::string("invalid ppo json: ") + e.what());
    }
    if (j.value("version", 0) != 1) throw IoError("unsupported ppo checkpoint version");
    const json& hyper = j.at("hyper");
    PpoConfig cfg;
    cfg.hidden = hyper.at("hidden").get<std::vector<int>>();
    cfg.actor_lr = hyper.at("actor_lr").get<double>();
    cfg.critic_lr = hyper.at("critic_lr").get<double>();
    cfg.gamma = hyper.at("gamma").get<double>();
    cfg.gae_lambda = hyper.at("gae_lambda").get<double>();
    cfg.clip_eps = hyper.at("clip_eps").get<double>();
    cfg.epochs_k = hyper.at("epochs_k").get<int>();
    cfg.batch_n = hyper.at("batch_n").get<int>();
    cfg.minibatch = hyper.at("minibatch").get<int>();
    cfg.normalize_advantages = hyper.at("normalize_advantages").get<bool>();
    PpoAgent agent(j.at("state_dim").get<int>(), j.at("n_actions").get<int>(), cfg, 0);
    agent.actor_ = Mlp::from_json(j.at("actor").dump());
    agent.critic_ = Mlp::from_json(j.at("critic").dump());
    agent.actor_opt_ = optimizer_from_json(agent.actor_, j.at("actor_optimizer").dump());
    agent.critic_opt_ = optimizer_from_json(agent.critic_, j.at("critic_optimizer").dump());
    for (const auto& item : j.at("rollout")) {
        PpoTransition t;
        t.state = vec_from_json(item.at("s"));
        t.action = item.at("a").get<int>();
        t.logprob = item.at("logprob").get<double>();
        t.value = item.at("value").get<double>();
        t.reward = item.at("r").get<double>();
        t.next_state = vec_from_json(item.at("s2"));
        agent.buffer_.push_back(std::move(t));
    }
    return agent;
}

}  // namespace koop
