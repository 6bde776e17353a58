#include "dac/nn.hpp"

#include <cmath>
#include <stdexcept>

namespace dac {

void EmbeddingConfig::validate() const {
    if (state_dim < 1) throw std::invalid_argument("embedding.state_dim must be >= 1");
    if (value_bins < 1) throw std::invalid_argument("embedding.value_bins must be >= 1");
    if (vocab_size < 1) throw std::invalid_argument("embedding.vocab_size must be >= 1");
}

Vec positional_code(int v, int value_bins, int k) {
    if (v < 1 || v > value_bins) {
        throw std::invalid_argument("positional_code: subrange out of [1, V]");
    }
    Vec code(2 * k);
    const double denom = static_cast<double>(value_bins) * static_cast<double>(k);
    for (int j = 0; j < k; ++j) {
        double arg = static_cast<double>(v) * static_cast<double>(j) / denom;
        code(j) = std::sin(arg);
        code(k + j) = std::cos(arg);
    }
    return code;
}

Mat positional_code_table(int value_bins, int k) {
    Mat table(value_bins, 2 * k);
    for (int v = 1; v <= value_bins; ++v) table.row(v - 1) = positional_code(v, value_bins, k);
    return table;
}

Mat uniform_init(int rows, int cols, int fan, std::mt19937_64& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(1, fan)));
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat m(rows, cols);
    for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < cols; ++j) m(i, j) = u(rng);
    }
    return m;
}

EventEmbeddingParams EventEmbeddingParams::create(ad::ParameterStore& store,
                                                  const std::string& prefix,
                                                  const EmbeddingConfig& cfg,
                                                  std::mt19937_64& rng) {
    cfg.validate();
    const int k = cfg.state_dim;
    EventEmbeddingParams p;
    p.var_table = store.add(prefix + ".var_table", uniform_init(cfg.vocab_size, k, k, rng));
    p.var_proj = store.add(prefix + ".var_proj", uniform_init(k, k, k, rng));
    p.pos_proj = store.add(prefix + ".pos_proj", uniform_init(2 * k, k, k, rng));
    p.bias = store.add(prefix + ".bias", uniform_init(1, k, k, rng));
    return p;
}

GatedCellParams GatedCellParams::create(ad::ParameterStore& store, const std::string& prefix,
                                        int input_dim, int state_dim, std::mt19937_64& rng) {
    GatedCellParams p;
    p.input_dim = input_dim;
    p.state_dim = state_dim;
    auto w = [&](const char* name) {
        return store.add(prefix + "." + name, uniform_init(input_dim, state_dim, state_dim, rng));
    };
    auto u = [&](const char* name) {
        return store.add(prefix + "." + name, uniform_init(state_dim, state_dim, state_dim, rng));
    };
    auto b = [&](const char* name) {
        return store.add(prefix + "." + name, uniform_init(1, state_dim, state_dim, rng));
    };
    p.w_r = w("w_r");
    p.u_r = u("u_r");
    p.b_r = b("b_r");
    p.w_g = w("w_g");
    p.u_g = u("u_g");
    p.b_g = b("b_g");
    p.w_h = w("w_h");
    p.u_h = u("u_h");
    p.b_h = b("b_h");
    return p;
}

namespace {

ad::Var leaf(ad::Tape& tape, ad::ParameterStore& store, int id, bool trainable) {
    if (trainable) return tape.parameter(store, id);
    return tape.constant(store.at(id).value);
}

}  // namespace

GatedCellVars cell_vars(ad::Tape& tape, ad::ParameterStore& store, const GatedCellParams& p,
                        bool trainable) {
    GatedCellVars v;
    v.w_r = leaf(tape, store, p.w_r, trainable);
    v.u_r = leaf(tape, store, p.u_r, trainable);
    v.b_r = leaf(tape, store, p.b_r, trainable);
    v.w_g = leaf(tape, store, p.w_g, trainable);
    v.u_g = leaf(tape, store, p.u_g, trainable);
    v.b_g = leaf(tape, store, p.b_g, trainable);
    v.w_h = leaf(tape, store, p.w_h, trainable);
    v.u_h = leaf(tape, store, p.u_h, trainable);
    v.b_h = leaf(tape, store, p.b_h, trainable);
    return v;
}

ad::Var cell_step(ad::Tape& tape, const GatedCellVars& v, ad::Var x_t, ad::Var h_prev) {
    ad::Var r = tape.sigmoid(tape.add_rowvec(
        tape.add(tape.matmul(x_t, v.w_r), tape.matmul(h_prev, v.u_r)), v.b_r));
    ad::Var g = tape.sigmoid(tape.add_rowvec(
        tape.add(tape.matmul(x_t, v.w_g), tape.matmul(h_prev, v.u_g)), v.b_g));
    ad::Var c = tape.tanh(tape.add_rowvec(
        tape.add(tape.matmul(x_t, v.w_h), tape.matmul(tape.hadamard(r, h_prev), v.u_h)), v.b_h));
    return tape.hadamard(g, c);
}

AffineHeadParams AffineHeadParams::create(ad::ParameterStore& store, const std::string& prefix,
                                          int input_dim, int output_dim, double init_scale,
                                          std::mt19937_64& rng) {
    AffineHeadParams p;
    p.input_dim = input_dim;
    p.output_dim = output_dim;
    if (init_scale == 0.0) {
        p.weight = store.add(prefix + ".weight", input_dim, output_dim);
        p.bias = store.add(prefix + ".bias", 1, output_dim);
    } else {
        p.weight = store.add(prefix + ".weight",
                             init_scale * uniform_init(input_dim, output_dim, input_dim, rng));
        p.bias = store.add(prefix + ".bias",
                           init_scale * uniform_init(1, output_dim, input_dim, rng));
    }
    return p;
}

ad::Var AffineHeadParams::apply(ad::Tape& tape, ad::ParameterStore& store, ad::Var x,
                                bool trainable) const {
    return tape.add_rowvec(tape.matmul(x, leaf(tape, store, weight, trainable)),
                           leaf(tape, store, bias, trainable));
}

BatchLayout build_batch_layout(const std::vector<const PatientTrajectory*>& batch,
                               const EmbeddingConfig& cfg) {
    cfg.validate();
    BatchLayout layout;
    layout.batch_size = static_cast<int>(batch.size());
    if (batch.empty()) throw std::invalid_argument("build_batch_layout: empty batch");
    for (const PatientTrajectory* p : batch) {
        layout.lengths.push_back(p->length());
        layout.max_len = std::max(layout.max_len, p->length());
        layout.outcome.push_back(p->outcome);
    }

    layout.valid = Mat::Zero(layout.batch_size, layout.max_len);
    layout.steps.resize(static_cast<std::size_t>(layout.max_len));
    layout.action_at.assign(static_cast<std::size_t>(layout.max_len),
                            std::vector<int>(static_cast<std::size_t>(layout.batch_size), 0));
    layout.change_at.assign(static_cast<std::size_t>(layout.max_len),
                            std::vector<int>(static_cast<std::size_t>(layout.batch_size),
                                             kInitialChangeClass));

    for (int i = 0; i < layout.batch_size; ++i) {
        const PatientTrajectory& p = *batch[static_cast<std::size_t>(i)];
        std::vector<ChangeClass> changes = change_sequence(p);
        for (int t = 0; t < layout.max_len; ++t) {
            BatchLayout::StepEvents& se = layout.steps[static_cast<std::size_t>(t)];
            if (t < p.length()) {
                const TrajectoryStep& step = p.steps[static_cast<std::size_t>(t)];
                for (const ObservationEvent& e : step.events) {
                    if (e.variable_id < 0 || e.variable_id >= cfg.vocab_size) {
                        throw std::invalid_argument("batch: variable_id outside vocabulary");
                    }
                    if (e.subrange < 1 || e.subrange > cfg.value_bins) {
                        throw std::invalid_argument("batch: event missing valid subrange");
                    }
                    se.var_rows.push_back(e.variable_id);
                    se.pos_rows.push_back(e.subrange - 1);
                    se.segment.push_back(i);
                }
                layout.valid(i, t) = 1.0;
                layout.action_at[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] =
                    flat_index(step.action);
                layout.change_at[static_cast<std::size_t>(t)][static_cast<std::size_t>(i)] =
                    change_class_index(changes[static_cast<std::size_t>(t)]);
            } else {
                // Pad so segment_max sees one row per patient; losses mask it.
                se.var_rows.push_back(0);
                se.pos_rows.push_back(0);
                se.segment.push_back(i);
            }
        }
    }
    return layout;
}

SequenceEncoderParams SequenceEncoderParams::create(ad::ParameterStore& store,
                                                    const std::string& prefix,
                                                    const EmbeddingConfig& cfg,
                                                    std::mt19937_64& rng) {
    SequenceEncoderParams p;
    p.cfg = cfg;
    p.embed = EventEmbeddingParams::create(store, prefix + ".embed", cfg, rng);
    p.cell = GatedCellParams::create(store, prefix + ".cell", cfg.state_dim, cfg.state_dim, rng);
    return p;
}

EncodedBatch encode_batch(ad::Tape& tape, ad::ParameterStore& store,
                          const SequenceEncoderParams& enc, const BatchLayout& layout,
                          bool trainable) {
    const int k = enc.cfg.state_dim;
    ad::Var var_table = leaf(tape, store, enc.embed.var_table, trainable);
    ad::Var var_proj = leaf(tape, store, enc.embed.var_proj, trainable);
    ad::Var pos_proj = leaf(tape, store, enc.embed.pos_proj, trainable);
    ad::Var bias = leaf(tape, store, enc.embed.bias, trainable);

    // Projected lookup tables; gathering rows of these equals the affine map
    // over [variable embedding | sub-range code].
    ad::Var var_pre = tape.matmul(var_table, var_proj);
    ad::Var pos_pre = tape.matmul(
        tape.constant(positional_code_table(enc.cfg.value_bins, k)), pos_proj);

    GatedCellVars cv = cell_vars(tape, store, enc.cell, trainable);

    EncodedBatch out;
    ad::Var h = tape.constant(Mat::Zero(layout.batch_size, k));
    for (int t = 0; t < layout.max_len; ++t) {
        const BatchLayout::StepEvents& se = layout.steps[static_cast<std::size_t>(t)];
        ad::Var events = tape.add_rowvec(tape.add(tape.gather_rows(var_pre, se.var_rows),
                                                  tape.gather_rows(pos_pre, se.pos_rows)),
                                         bias);
        ad::Var pooled = tape.segment_max(events, se.segment, layout.batch_size);
        h = cell_step(tape, cv, pooled, h);
        out.pooled.push_back(pooled);
        out.states.push_back(h);
    }
    return out;
}

Mat encode_trajectory(ad::ParameterStore& store, const SequenceEncoderParams& enc,
                      const PatientTrajectory& traj) {
    ad::Tape tape;
    std::vector<const PatientTrajectory*> one{&traj};
    BatchLayout layout = build_batch_layout(one, enc.cfg);
    EncodedBatch encoded = encode_batch(tape, store, enc, layout, /*trainable=*/false);
    Mat states(traj.length(), enc.cfg.state_dim);
    for (int t = 0; t < traj.length(); ++t) states.row(t) = tape.value(encoded.states[t]).row(0);
    return states;
}

}  // namespace dac
