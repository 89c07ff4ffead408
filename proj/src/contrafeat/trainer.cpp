#include "trainer.hpp"

#include <cmath>

#include "errors.hpp"

namespace contrafeat {

void TrainConfig::validate(const ToyWorldConfig& world) const {
    if (steps < 0) throw ConfigError("train: steps must be >= 0");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (directions < 2) throw ConfigError("train: need at least 2 directions (m >= 2)");
    if (subspace_k < 1 || subspace_k > world.n) throw ConfigError("train: k out of range");
    if (!(lr_navigator > 0.0f) || !(lr_prototypes > 0.0f)) throw ConfigError("train: bad learning rate");
    if (!(strength == strength) || !std::isfinite(strength)) throw ConfigError("train: bad strength");
    if (loss.lambda < 0.0f) throw ConfigError("train: lambda must be >= 0");
    if (frozen_directions) {
        if (frozen_directions->ndim() != 2 || frozen_directions->dim(0) != directions ||
            frozen_directions->dim(1) != world.n)
            throw ConfigError("train: frozen directions shape must be (m, n)");
    }
}

Trainer::Trainer(const TrainConfig& cfg, const PcaBasis& basis, const ToyWorld& world)
    : world_(world) {
    cfg.validate(world.config());
    state_.config = cfg;
    state_.basis = basis;
    state_.rng = Rng(cfg.seed);
    state_.params = NavigatorParams::init(cfg.directions, cfg.subspace_k, world.config().k_layers,
                                          state_.rng);
    if (cfg.loss.variant == LossVariant::Pt)
        state_.bank = PrototypeBank::init(cfg.directions, world.config().image_size, state_.rng);
    state_.adam_v_sub = AdamState::for_param(state_.params.v_sub);
    state_.adam_att = AdamState::for_param(state_.params.att_logits);
    if (state_.bank) state_.adam_protos = AdamState::for_param(state_.bank->patterns);
    build_setup();
}

Trainer::Trainer(TrainerState state, const ToyWorld& world)
    : state_(std::move(state)), world_(world) {
    state_.config.validate(world.config());
    build_setup();
}

void Trainer::build_setup() {
    const TrainConfig& cfg = state_.config;
    setup_.loss = cfg.loss;
    setup_.strength = cfg.strength;
    setup_.basis_top_k = state_.basis.top_k(cfg.subspace_k);
    setup_.smoothing = smoothing_matrix(world_.config().k_layers, cfg.att_sigma, cfg.att_boundary);
    setup_.dir_length = cfg.dir_length;
    setup_.frozen_directions = cfg.frozen_directions;
    setup_.freeze_attention = cfg.freeze_attention;
}

TraceRow Trainer::train_step() {
    const TrainConfig& cfg = state_.config;
    const int m = cfg.directions;
    const int k_layers = world_.config().k_layers;

    Batch batch;
    batch.d = static_cast<int>(state_.rng.below(static_cast<std::uint64_t>(m)));
    batch.d_alt = static_cast<int>(state_.rng.below(static_cast<std::uint64_t>(m - 1)));
    if (batch.d_alt >= batch.d) ++batch.d_alt;
    for (int i = 0; i < cfg.batch_size; ++i) {
        BiPair pair;
        pair.x = broadcast(world_.sample_w0(state_.rng), k_layers);
        if (cfg.loss.variant == LossVariant::Bi)
            pair.y = broadcast(world_.sample_w0(state_.rng), k_layers);
        batch.items.push_back(std::move(pair));
    }

    TotalLossResult res = total_loss(batch, state_.params,
                                     state_.bank ? &*state_.bank : nullptr, setup_, world_);
    if (!std::isfinite(res.loss))
        throw NumericalError("train: non-finite loss at step " + std::to_string(state_.step) +
                             " (d=" + std::to_string(batch.d) + ", mode=" + to_string(cfg.loss.mode) +
                             ", variant=" + to_string(cfg.loss.variant) + ")");

    std::vector<Tensor*> grads;
    const bool update_dirs = !cfg.frozen_directions.has_value();
    const bool update_att = !cfg.freeze_attention;
    if (update_dirs) grads.push_back(&res.grad_v_sub);
    if (update_att) grads.push_back(&res.grad_att);
    if (state_.bank) grads.push_back(&res.grad_protos);
    clip_global_norm(grads, cfg.clip_norm);

    if (update_dirs)
        state_.adam_v_sub.step(state_.params.v_sub, res.grad_v_sub, cfg.lr_navigator,
                               cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    if (update_att)
        state_.adam_att.step(state_.params.att_logits, res.grad_att, cfg.lr_navigator,
                             cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);
    if (state_.bank)
        state_.adam_protos.step(state_.bank->patterns, res.grad_protos, cfg.lr_prototypes,
                                cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps);

    // Collapsed coefficient rows are re-randomized to keep projections valid.
    if (update_dirs) {
        const int k = cfg.subspace_k;
        for (int d = 0; d < m; ++d) {
            float* row = &state_.params.v_sub.v[static_cast<std::size_t>(d) * k];
            if (norm2(row, static_cast<std::size_t>(k)) < 1e-8f) {
                for (int j = 0; j < k; ++j) row[j] = state_.rng.normalf();
                const float nrm = norm2(row, static_cast<std::size_t>(k));
                for (int j = 0; j < k; ++j) row[j] /= nrm;
            }
        }
    }

    ++state_.step;
    return TraceRow{static_cast<int>(state_.step), res.loss, res.consistency, res.orthogonality,
                    res.diversity};
}

const std::vector<TraceRow>& Trainer::train() {
    while (state_.step < state_.config.steps) {
        TraceRow row = train_step();
        if (state_.config.log_interval > 0 &&
            (state_.step % state_.config.log_interval == 0 || state_.step == state_.config.steps))
            trace_.push_back(row);
    }
    return trace_;
}

Bundle Trainer::to_bundle() const {
    Bundle b;
    b.arrays["nav.v_sub"] = state_.params.v_sub;
    b.arrays["nav.att_logits"] = state_.params.att_logits;
    if (state_.bank) {
        b.arrays["proto.patterns"] = state_.bank->patterns;
        b.put_scalar("proto.image_size", static_cast<float>(state_.bank->image_size));
    }
    b.arrays["pca.components"] = state_.basis.components;
    b.arrays["pca.eigenvalues"] = state_.basis.eigenvalues;
    b.arrays["pca.mean"] = state_.basis.mean;
    b.put_scalar("pca.sample_count", static_cast<float>(state_.basis.sample_count));
    if (state_.config.frozen_directions)
        b.arrays["frozen.directions"] = *state_.config.frozen_directions;
    b.arrays["adam.v_sub.m"] = state_.adam_v_sub.m;
    b.arrays["adam.v_sub.v"] = state_.adam_v_sub.v;
    b.put_scalar("adam.v_sub.t", static_cast<float>(state_.adam_v_sub.t));
    b.arrays["adam.att.m"] = state_.adam_att.m;
    b.arrays["adam.att.v"] = state_.adam_att.v;
    b.put_scalar("adam.att.t", static_cast<float>(state_.adam_att.t));
    if (state_.bank) {
        b.arrays["adam.protos.m"] = state_.adam_protos.m;
        b.arrays["adam.protos.v"] = state_.adam_protos.v;
        b.put_scalar("adam.protos.t", static_cast<float>(state_.adam_protos.t));
    }
    b.put_scalar("trainer.step", static_cast<float>(state_.step));
    const auto st = state_.rng.state();
    b.put_u64s("trainer.rng", {st[0], st[1], st[2], st[3]});
    return b;
}

TrainerState Trainer::state_from_bundle(const Bundle& b) {
    TrainerState s;
    s.params.v_sub = b.get("nav.v_sub");
    s.params.att_logits = b.get("nav.att_logits");
    if (b.has("proto.patterns")) {
        PrototypeBank bank;
        bank.patterns = b.get("proto.patterns");
        bank.image_size = static_cast<int>(b.get_scalar("proto.image_size"));
        s.bank = std::move(bank);
    }
    s.basis.components = b.get("pca.components");
    s.basis.eigenvalues = b.get("pca.eigenvalues");
    s.basis.mean = b.get("pca.mean");
    s.basis.sample_count = static_cast<long long>(b.get_scalar("pca.sample_count"));
    if (b.has("frozen.directions")) s.config.frozen_directions = b.get("frozen.directions");
    s.adam_v_sub.m = b.get("adam.v_sub.m");
    s.adam_v_sub.v = b.get("adam.v_sub.v");
    s.adam_v_sub.t = static_cast<long long>(b.get_scalar("adam.v_sub.t"));
    s.adam_att.m = b.get("adam.att.m");
    s.adam_att.v = b.get("adam.att.v");
    s.adam_att.t = static_cast<long long>(b.get_scalar("adam.att.t"));
    if (s.bank) {
        s.adam_protos.m = b.get("adam.protos.m");
        s.adam_protos.v = b.get("adam.protos.v");
        s.adam_protos.t = static_cast<long long>(b.get_scalar("adam.protos.t"));
    }
    s.step = static_cast<long long>(b.get_scalar("trainer.step"));
    const auto words = b.get_u64s("trainer.rng");
    s.rng.set_state({words[0], words[1], words[2], words[3]});
    return s;
}

}  // namespace contrafeat
