#include "eppo/nn/model.hpp"

#include <cmath>
#include <cstring>

namespace eppo::nn {

namespace {

std::string block(int l, const char* leaf) { return "block" + std::to_string(l) + "." + leaf; }

Eigen::RowVectorXd layernorm_row(const Eigen::RowVectorXd& x, const Mat& gamma, const Mat& beta) {
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + 1e-5);
    Eigen::RowVectorXd out = ((x.array() - mean) * inv).matrix();
    return (out.array() * gamma.row(0).array() + beta.row(0).array()).matrix();
}

Eigen::RowVectorXd gelu_row(Eigen::RowVectorXd x) { return x.unaryExpr([](double v) { return gelu_scalar(v); }); }

}  // namespace

void ModelSpec::validate() const {
    if (embedding_dim < 1 || hidden_dim < 1 || n_layers < 1 || n_heads < 1 || max_seq_len < 1) {
        throw ParameterError("ModelSpec: sizes must be positive");
    }
    if (embedding_dim % n_heads != 0) {
        throw ParameterError("ModelSpec: embedding_dim " + std::to_string(embedding_dim) +
                             " not divisible by n_heads " + std::to_string(n_heads));
    }
    if (n_states < 1 || n_actions < 1) {
        throw ParameterError("ModelSpec: empty vocabulary");
    }
    for (double p : {dropout_attn, dropout_resid, dropout_emb}) {
        if (!(p >= 0.0 && p < 1.0)) {
            throw ParameterError("ModelSpec: dropout must lie in [0, 1)");
        }
    }
    if (!(ctg_scale > 0.0)) {
        throw ParameterError("ModelSpec: ctg_scale must be positive");
    }
}

json ModelSpec::to_json() const {
    return json{{"embedding_dim", embedding_dim}, {"hidden_dim", hidden_dim},     {"n_layers", n_layers},
                {"n_heads", n_heads},             {"max_seq_len", max_seq_len},   {"dropout_attn", dropout_attn},
                {"dropout_resid", dropout_resid}, {"dropout_emb", dropout_emb},   {"n_states", n_states},
                {"n_actions", n_actions},         {"rtg_channel", rtg_channel},   {"critic_heads", critic_heads},
                {"ctg_scale", ctg_scale}};
}

ModelSpec ModelSpec::from_json(const json& j) {
    ModelSpec s;
    try {
        s.embedding_dim = j.value("embedding_dim", s.embedding_dim);
        s.hidden_dim = j.value("hidden_dim", s.hidden_dim);
        s.n_layers = j.value("n_layers", s.n_layers);
        s.n_heads = j.value("n_heads", s.n_heads);
        s.max_seq_len = j.value("max_seq_len", s.max_seq_len);
        s.dropout_attn = j.value("dropout_attn", s.dropout_attn);
        s.dropout_resid = j.value("dropout_resid", s.dropout_resid);
        s.dropout_emb = j.value("dropout_emb", s.dropout_emb);
        s.n_states = j.value("n_states", s.n_states);
        s.n_actions = j.value("n_actions", s.n_actions);
        s.rtg_channel = j.value("rtg_channel", s.rtg_channel);
        s.critic_heads = j.value("critic_heads", s.critic_heads);
        s.ctg_scale = j.value("ctg_scale", s.ctg_scale);
    } catch (const json::exception& e) {
        throw DataError(std::string("ModelSpec: ") + e.what());
    }
    s.validate();
    return s;
}

void Batch::append_sequence(const std::vector<StepInput>& seq) {
    if (seq.empty()) {
        throw DataError("Batch: empty sequence");
    }
    segments.push_back({static_cast<int>(steps.size()), static_cast<int>(seq.size())});
    steps.insert(steps.end(), seq.begin(), seq.end());
}

SequenceModel::SequenceModel(const ModelSpec& spec, std::uint64_t seed) : spec_(spec) {
    spec_.validate();
    Rng rng(seed);
    const int e = spec_.embedding_dim;
    const int h = spec_.hidden_dim;
    const int a = spec_.n_actions;
    const double emb_bound = 1.0 / std::sqrt(static_cast<double>(e));
    add_param("enc.state", spec_.n_states, e, emb_bound, rng);
    add_param("enc.action", a + 1, e, emb_bound, rng);
    add_param("enc.arrival", spec_.n_states + 1, e, emb_bound, rng);
    const int in = 3 * e + spec_.n_scalars();
    add_param("enc.w1", in, h, 1.0 / std::sqrt(in), rng);
    add_const("enc.b1", 1, h, 0.0);
    add_param("enc.w2", h, e, 1.0 / std::sqrt(h), rng);
    add_const("enc.b2", 1, e, 0.0);
    add_param("pos", spec_.max_seq_len, e, emb_bound, rng);
    for (int l = 0; l < spec_.n_layers; ++l) {
        add_const(block(l, "ln1.g"), 1, e, 1.0);
        add_const(block(l, "ln1.b"), 1, e, 0.0);
        add_param(block(l, "attn.wqkv"), e, 3 * e, emb_bound, rng);
        add_const(block(l, "attn.bqkv"), 1, 3 * e, 0.0);
        add_param(block(l, "attn.wo"), e, e, emb_bound, rng);
        add_const(block(l, "attn.bo"), 1, e, 0.0);
        add_const(block(l, "ln2.g"), 1, e, 1.0);
        add_const(block(l, "ln2.b"), 1, e, 0.0);
        add_param(block(l, "ff.w1"), e, h, emb_bound, rng);
        add_const(block(l, "ff.b1"), 1, h, 0.0);
        add_param(block(l, "ff.w2"), h, e, 1.0 / std::sqrt(h), rng);
        add_const(block(l, "ff.b2"), 1, e, 0.0);
    }
    add_const("lnf.g", 1, e, 1.0);
    add_const("lnf.b", 1, e, 0.0);
    // Small policy head so the untrained policy is close to uniform.
    add_param("actor.w", e, a, 0.1 * emb_bound, rng);
    add_const("actor.b", 1, a, 0.0);
    if (spec_.critic_heads) {
        for (const char* head : {"qr", "qc"}) {
            const std::string pre = head;
            add_param(pre + ".act", a, e, emb_bound, rng);
            add_param(pre + ".wh", e, h, emb_bound, rng);
            add_param(pre + ".wa", e, h, emb_bound, rng);
            add_const(pre + ".b1", 1, h, 0.0);
            add_param(pre + ".w2", h, 1, 1.0 / std::sqrt(h), rng);
            add_const(pre + ".b2", 1, 1, 0.0);
        }
    }
}

void SequenceModel::add_param(const std::string& name, int rows, int cols, double bound, Rng& rng) {
    std::uniform_real_distribution<double> u(-bound, bound);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
        m.data()[i] = u(rng);
    }
    index_[name] = params_.size();
    params_.push_back({name, make_parameter(std::move(m))});
}

void SequenceModel::add_const(const std::string& name, int rows, int cols, double v) {
    index_[name] = params_.size();
    params_.push_back({name, make_parameter(Mat::Constant(rows, cols, v))});
}

Var SequenceModel::p(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) {
        throw ParameterError("no parameter named " + name);
    }
    return params_[it->second].var;
}

const Mat& SequenceModel::value(const std::string& name) const { return p(name)->value; }

Var SequenceModel::encode(Graph& g, const std::vector<StepInput>& steps) const {
    const int a = spec_.n_actions;
    const int s = spec_.n_states;
    std::vector<int> ids_s;
    std::vector<int> ids_a;
    std::vector<int> ids_r;
    Mat scalars(static_cast<Eigen::Index>(steps.size()), spec_.n_scalars());
    ids_s.reserve(steps.size());
    for (std::size_t i = 0; i < steps.size(); ++i) {
        const StepInput& t = steps[i];
        if (t.state < 0 || t.state >= s) {
            throw EncodingError("state id " + std::to_string(t.state) + " outside [0, " + std::to_string(s) + ")");
        }
        if (t.prev_action < -1 || t.prev_action >= a) {
            throw EncodingError("action id " + std::to_string(t.prev_action) + " outside [-1, " + std::to_string(a) +
                                ")");
        }
        if (t.prev_arrival < -1 || t.prev_arrival >= s) {
            throw EncodingError("arrival id " + std::to_string(t.prev_arrival) + " outside [-1, " +
                                std::to_string(s) + ")");
        }
        if (!std::isfinite(t.prev_reward) || !std::isfinite(t.prev_cost) || !std::isfinite(t.ctg) ||
            !std::isfinite(t.rtg)) {
            throw EncodingError("non-finite scalar channel");
        }
        ids_s.push_back(t.state);
        ids_a.push_back(t.prev_action < 0 ? a : t.prev_action);
        ids_r.push_back(t.prev_arrival < 0 ? s : t.prev_arrival);
        const auto r = static_cast<Eigen::Index>(i);
        scalars(r, 0) = t.prev_reward;
        scalars(r, 1) = t.prev_cost;
        scalars(r, 2) = t.ctg / spec_.ctg_scale;
        scalars(r, 3) = t.episode_start ? 1.0 : 0.0;
        if (spec_.rtg_channel) {
            scalars(r, 4) = t.rtg;
        }
    }
    Var in = concat_cols(g, {embedding(g, p("enc.state"), ids_s), embedding(g, p("enc.action"), ids_a),
                             embedding(g, p("enc.arrival"), ids_r), g.constant(std::move(scalars))});
    Var hid = gelu(g, linear(g, in, p("enc.w1"), p("enc.b1")));
    return linear(g, hid, p("enc.w2"), p("enc.b2"));
}

Var SequenceModel::critic(Graph& g, const std::string& head, const Var& hidden) const {
    Var base = linear(g, hidden, p(head + ".wh"), p(head + ".b1"));
    std::vector<Var> cols;
    for (int a = 0; a < spec_.n_actions; ++a) {
        Var arow = matmul(g, embedding(g, p(head + ".act"), {a}), p(head + ".wa"));
        Var z = relu(g, add_row(g, base, arow));
        cols.push_back(linear(g, z, p(head + ".w2"), p(head + ".b2")));
    }
    return concat_cols(g, cols);
}

Outputs SequenceModel::forward(Graph& g, const Batch& batch, bool training, Rng* rng) const {
    const bool any_dropout = spec_.dropout_attn > 0 || spec_.dropout_resid > 0 || spec_.dropout_emb > 0;
    if (training && any_dropout && rng == nullptr) {
        throw ParameterError("forward: training with dropout needs an RNG");
    }
    std::vector<int> pos;
    pos.reserve(batch.steps.size());
    for (const auto& seg : batch.segments) {
        if (seg.length > spec_.max_seq_len) {
            throw TruncationError("sequence of " + std::to_string(seg.length) + " tokens exceeds context " +
                                  std::to_string(spec_.max_seq_len));
        }
        for (int i = 0; i < seg.length; ++i) {
            pos.push_back(i);
        }
    }
    if (pos.size() != batch.steps.size()) {
        throw ShapeError("forward", "segments do not cover the batch");
    }
    Rng dummy(0);
    Rng& r = rng != nullptr ? *rng : dummy;
    const int e = spec_.embedding_dim;
    Var x = add(g, encode(g, batch.steps), embedding(g, p("pos"), pos));
    x = dropout(g, x, spec_.dropout_emb, training, r);
    for (int l = 0; l < spec_.n_layers; ++l) {
        Var h = layernorm(g, x, p(block(l, "ln1.g")), p(block(l, "ln1.b")));
        Var qkv = linear(g, h, p(block(l, "attn.wqkv")), p(block(l, "attn.bqkv")));
        Var att = causal_attention(g, slice_cols(g, qkv, 0, e), slice_cols(g, qkv, e, e), slice_cols(g, qkv, 2 * e, e),
                                   batch.segments, spec_.n_heads, spec_.dropout_attn, training, &r);
        Var o = linear(g, att, p(block(l, "attn.wo")), p(block(l, "attn.bo")));
        x = add(g, x, dropout(g, o, spec_.dropout_resid, training, r));
        Var h2 = layernorm(g, x, p(block(l, "ln2.g")), p(block(l, "ln2.b")));
        Var f = linear(g, gelu(g, linear(g, h2, p(block(l, "ff.w1")), p(block(l, "ff.b1")))), p(block(l, "ff.w2")),
                       p(block(l, "ff.b2")));
        x = add(g, x, dropout(g, f, spec_.dropout_resid, training, r));
    }
    Outputs out;
    out.hidden = layernorm(g, x, p("lnf.g"), p("lnf.b"));
    out.logits = linear(g, out.hidden, p("actor.w"), p("actor.b"));
    if (spec_.critic_heads) {
        out.q = critic(g, "qr", out.hidden);
        out.qc = critic(g, "qc", out.hidden);
    }
    return out;
}

void SequenceModel::zero_grad() {
    for (auto& prm : params_) {
        prm.var->grad.resize(0, 0);
    }
}

void SequenceModel::set_trainable(bool trainable) {
    for (auto& prm : params_) {
        prm.var->needs_grad = trainable;
    }
}

void SequenceModel::copy_from(const SequenceModel& other) {
    if (other.params_.size() != params_.size()) {
        throw ParameterError("copy_from: architectures differ");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        params_[i].var->value = other.params_[i].var->value;
    }
}

void SequenceModel::polyak_from(const SequenceModel& other, double tau) {
    if (other.params_.size() != params_.size()) {
        throw ParameterError("polyak_from: architectures differ");
    }
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Mat& t = params_[i].var->value;
        t = (1.0 - tau) * t + tau * other.params_[i].var->value;
    }
}

std::uint64_t SequenceModel::checksum() const {
    std::uint64_t h = fnv1a(nullptr, 0);
    for (const auto& prm : params_) {
        h = fnv1a(prm.name.data(), prm.name.size(), h);
        const Mat& v = prm.var->value;
        h = fnv1a(v.data(), static_cast<std::size_t>(v.size()) * sizeof(double), h);
    }
    return h;
}

std::size_t SequenceModel::n_parameters() const {
    std::size_t n = 0;
    for (const auto& prm : params_) {
        n += static_cast<std::size_t>(prm.var->value.size());
    }
    return n;
}

InferenceSession::InferenceSession(const SequenceModel& model) : m_(model) { clear(); }

void InferenceSession::clear() {
    const auto& s = m_.spec_;
    k_.assign(static_cast<std::size_t>(s.n_layers), Mat(s.max_seq_len, s.embedding_dim));
    v_.assign(static_cast<std::size_t>(s.n_layers), Mat(s.max_seq_len, s.embedding_dim));
    len_ = 0;
}

StepOutput InferenceSession::push(const StepInput& token) {
    const auto& s = m_.spec_;
    if (len_ >= s.max_seq_len) {
        throw TruncationError("context of " + std::to_string(s.max_seq_len) + " tokens is full");
    }
    const int e = s.embedding_dim;
    const int dh = e / s.n_heads;
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    Eigen::RowVectorXd x;
    {
        Graph g;
        x = m_.encode(g, {token})->value.row(0);
    }
    x += m_.value("pos").row(len_);
    for (int l = 0; l < s.n_layers; ++l) {
        const auto li = static_cast<std::size_t>(l);
        Eigen::RowVectorXd h = layernorm_row(x, m_.value(block(l, "ln1.g")), m_.value(block(l, "ln1.b")));
        Eigen::RowVectorXd qkv = h * m_.value(block(l, "attn.wqkv")) + m_.value(block(l, "attn.bqkv"));
        k_[li].row(len_) = qkv.segment(e, e);
        v_[li].row(len_) = qkv.segment(2 * e, e);
        Eigen::RowVectorXd att(e);
        for (int hd = 0; hd < s.n_heads; ++hd) {
            const auto kh = k_[li].block(0, hd * dh, len_ + 1, dh);
            const auto vh = v_[li].block(0, hd * dh, len_ + 1, dh);
            Eigen::VectorXd sc = (kh * qkv.segment(hd * dh, dh).transpose()) * inv;
            const double mx = sc.maxCoeff();
            sc = (sc.array() - mx).exp().matrix();
            sc /= sc.sum();
            att.segment(hd * dh, dh) = sc.transpose() * vh;
        }
        x += att * m_.value(block(l, "attn.wo")) + m_.value(block(l, "attn.bo"));
        Eigen::RowVectorXd h2 = layernorm_row(x, m_.value(block(l, "ln2.g")), m_.value(block(l, "ln2.b")));
        Eigen::RowVectorXd f = gelu_row(h2 * m_.value(block(l, "ff.w1")) + m_.value(block(l, "ff.b1")));
        x += f * m_.value(block(l, "ff.w2")) + m_.value(block(l, "ff.b2"));
    }
    ++len_;
    const Eigen::RowVectorXd hid = layernorm_row(x, m_.value("lnf.g"), m_.value("lnf.b"));
    StepOutput out;
    out.logits = (hid * m_.value("actor.w") + m_.value("actor.b")).transpose();
    if (s.critic_heads) {
        for (const char* head : {"qr", "qc"}) {
            const std::string pre = head;
            Eigen::RowVectorXd base = hid * m_.value(pre + ".wh") + m_.value(pre + ".b1");
            Eigen::VectorXd q(s.n_actions);
            for (int a = 0; a < s.n_actions; ++a) {
                Eigen::RowVectorXd z = (base + m_.value(pre + ".act").row(a) * m_.value(pre + ".wa")).cwiseMax(0.0);
                q(a) = (z * m_.value(pre + ".w2"))(0) + m_.value(pre + ".b2")(0, 0);
            }
            (pre == "qr" ? out.q : out.qc) = q;
        }
    }
    return out;
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    Eigen::VectorXd p = (logits.array() - logits.maxCoeff()).exp().matrix();
    return p / p.sum();
}

std::uint64_t fnv1a(const void* data, std::size_t n, std::uint64_t h) {
    const auto* b = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        h ^= b[i];
        h *= 0x100000001b3ULL;
    }
    return h;
}

}  // namespace eppo::nn
