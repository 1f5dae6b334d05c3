#include "miscale/nn.h"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>

#include "json.hpp"

namespace miscale::nn {

const char* to_string(Activation a)
{
    switch (a) {
    case Activation::None: return "none";
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    }
    return "?";
}

Activation activation_from_string(const std::string& s)
{
    if (s == "none") return Activation::None;
    if (s == "relu") return Activation::ReLU;
    if (s == "sigmoid") return Activation::Sigmoid;
    throw Error(ErrorKind::Format, "unknown activation '" + s + "'");
}

const char* to_string(LayerKind k)
{
    switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::MaxPool2d: return "maxpool2d";
    case LayerKind::Dropout: return "dropout";
    case LayerKind::Flatten: return "flatten";
    }
    return "?";
}

namespace {

LayerKind kind_from_string(const std::string& s)
{
    for (auto k : {LayerKind::Dense, LayerKind::Conv2d, LayerKind::MaxPool2d, LayerKind::Dropout, LayerKind::Flatten})
        if (s == to_string(k)) return k;
    throw Error(ErrorKind::Format, "unknown layer kind '" + s + "'");
}

Matrix activate(const Matrix& pre, Activation act)
{
    switch (act) {
    case Activation::None: return pre;
    case Activation::ReLU: return pre.cwiseMax(0.0);
    case Activation::Sigmoid: return pre.unaryExpr([](double x) { return 1.0 / (1.0 + std::exp(-x)); });
    }
    return pre;
}

// Multiplies grad by the activation derivative, given the pre-activation and output.
void activation_backward(Matrix& grad, const Matrix& pre, const Matrix& out, Activation act)
{
    switch (act) {
    case Activation::None: break;
    case Activation::ReLU: grad.array() *= (pre.array() > 0.0).cast<double>(); break;
    case Activation::Sigmoid: grad.array() *= out.array() * (1.0 - out.array()); break;
    }
}

void glorot_uniform(Matrix& w, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng)
{
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> u(-limit, limit);
    for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = u(rng);
}

class DenseLayer final : public Layer {
public:
    DenseLayer(const LayerSpec& spec, Shape3 in, std::mt19937_64& rng) : act_(spec.activation)
    {
        in_shape = in;
        const std::size_t n_in = in.size();
        if (spec.in != 0 && spec.in != n_in)
            throw Error(ErrorKind::Composition, "dense layer expects " + std::to_string(spec.in) + " inputs, previous layer gives "
                                                    + std::to_string(n_in));
        if (spec.out == 0) throw Error(ErrorKind::Composition, "dense layer needs a positive width");
        out_shape = {1, 1, spec.out};
        weight_.value = Matrix(static_cast<Eigen::Index>(n_in), static_cast<Eigen::Index>(spec.out));
        glorot_uniform(weight_.value, n_in, spec.out, rng);
        weight_.grad = Matrix::Zero(weight_.value.rows(), weight_.value.cols());
        bias_.value = Matrix::Zero(1, static_cast<Eigen::Index>(spec.out));
        bias_.grad = bias_.value;
        if (spec.mask) {
            if (spec.mask->rows() != weight_.value.rows() || spec.mask->cols() != weight_.value.cols())
                throw Error(ErrorKind::Composition, "dense mask shape differs from weight shape");
            mask_ = *spec.mask;
        }
    }

    Matrix forward(const Matrix& in, bool, std::mt19937_64&) override
    {
        input_ = in;
        pre_ = affine(in);
        out_ = activate(pre_, act_);
        return out_;
    }

    Matrix infer(const Matrix& in) const override { return activate(affine(in), act_); }

    Matrix backward(const Matrix& grad_out) override
    {
        Matrix g = grad_out;
        activation_backward(g, pre_, out_, act_);
        weight_.grad.noalias() = input_.transpose() * g;
        if (mask_) weight_.grad.array() *= mask_->array();
        bias_.grad = g.colwise().sum();
        if (skip_input_grad) return {};
        return g * effective_weight().transpose();
    }

    std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
    LayerKind kind() const override { return LayerKind::Dense; }

private:
    Matrix effective_weight() const
    {
        if (mask_) return weight_.value.cwiseProduct(*mask_);
        return weight_.value;
    }

    Matrix affine(const Matrix& in) const
    {
        Matrix pre = in * effective_weight();
        pre.rowwise() += bias_.value.row(0);
        return pre;
    }

    Activation act_;
    Parameter weight_, bias_;
    std::optional<Matrix> mask_;
    Matrix input_, pre_, out_;
};

class Conv2dLayer final : public Layer {
public:
    Conv2dLayer(const LayerSpec& spec, Shape3 in, std::mt19937_64& rng)
        : act_(spec.activation), kh_(spec.kernel_h), kw_(spec.kernel_w), stride_(spec.stride), pad_(spec.padding)
    {
        in_shape = in;
        if (spec.out_channels == 0 || kh_ == 0 || kw_ == 0 || stride_ == 0)
            throw Error(ErrorKind::Composition, "conv2d needs positive channels, kernel and stride");
        if (in.height + 2 * pad_ < kh_ || in.width + 2 * pad_ < kw_)
            throw Error(ErrorKind::Composition, "conv2d kernel larger than its padded input");
        out_shape = {(in.height + 2 * pad_ - kh_) / stride_ + 1, (in.width + 2 * pad_ - kw_) / stride_ + 1,
                     spec.out_channels};
        const std::size_t patch = kh_ * kw_ * in.channels;
        weight_.value = Matrix(static_cast<Eigen::Index>(patch), static_cast<Eigen::Index>(spec.out_channels));
        glorot_uniform(weight_.value, patch, kh_ * kw_ * spec.out_channels, rng);
        weight_.grad = Matrix::Zero(weight_.value.rows(), weight_.value.cols());
        bias_.value = Matrix::Zero(1, static_cast<Eigen::Index>(spec.out_channels));
        bias_.grad = bias_.value;
        if (spec.mask) {
            if (spec.mask->rows() != weight_.value.rows() || spec.mask->cols() != weight_.value.cols())
                throw Error(ErrorKind::Composition, "conv mask shape differs from kernel shape");
            mask_ = *spec.mask;
        }
    }

    Matrix forward(const Matrix& in, bool, std::mt19937_64&) override
    {
        batch_ = static_cast<std::size_t>(in.rows());
        im2col(in, cols_);
        conv(cols_, batch_, pre_);
        out_ = activate(pre_, act_);
        return out_;
    }

    Matrix infer(const Matrix& in) const override
    {
        Matrix cols, pre;
        im2col(in, cols);
        conv(cols, static_cast<std::size_t>(in.rows()), pre);
        return activate(pre, act_);
    }

    Matrix backward(const Matrix& grad_out) override
    {
        Matrix g = grad_out;
        activation_backward(g, pre_, out_, act_);
        const auto positions = static_cast<Eigen::Index>(batch_ * out_shape.height * out_shape.width);
        Eigen::Map<const Matrix> g2(g.data(), positions, static_cast<Eigen::Index>(out_shape.channels));
        weight_.grad.noalias() = cols_.transpose() * g2;
        if (mask_) weight_.grad.array() *= mask_->array();
        bias_.grad = g2.colwise().sum();
        if (skip_input_grad) return {};
        const Matrix dcols = g2 * effective_weight().transpose();
        return col2im(dcols, batch_);
    }

    std::vector<Parameter*> parameters() override { return {&weight_, &bias_}; }
    LayerKind kind() const override { return LayerKind::Conv2d; }

private:
    Matrix effective_weight() const
    {
        if (mask_) return weight_.value.cwiseProduct(*mask_);
        return weight_.value;
    }

    // Rows are (sample, out_y, out_x); columns are (ky, kx, channel).
    void im2col(const Matrix& in, Matrix& cols) const
    {
        const std::size_t b = static_cast<std::size_t>(in.rows());
        const std::size_t oh = out_shape.height, ow = out_shape.width, c = in_shape.channels;
        cols.resize(static_cast<Eigen::Index>(b * oh * ow), static_cast<Eigen::Index>(kh_ * kw_ * c));
        if (pad_ > 0) cols.setZero();
        for (std::size_t s = 0; s < b; ++s) {
            const double* src = in.row(static_cast<Eigen::Index>(s)).data();
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double* dst = cols.row(static_cast<Eigen::Index>((s * oh + oy) * ow + ox)).data();
                    for (std::size_t ky = 0; ky < kh_; ++ky) {
                        const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
                        if (iy < 0 || iy >= static_cast<long>(in_shape.height)) continue;
                        for (std::size_t kx = 0; kx < kw_; ++kx) {
                            const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
                            if (ix < 0 || ix >= static_cast<long>(in_shape.width)) continue;
                            const double* p = src + (static_cast<std::size_t>(iy) * in_shape.width + static_cast<std::size_t>(ix)) * c;
                            std::copy(p, p + c, dst + (ky * kw_ + kx) * c);
                        }
                    }
                }
        }
    }

    Matrix col2im(const Matrix& dcols, std::size_t b) const
    {
        const std::size_t oh = out_shape.height, ow = out_shape.width, c = in_shape.channels;
        Matrix grad_in = Matrix::Zero(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(in_shape.size()));
        for (std::size_t s = 0; s < b; ++s) {
            double* dst = grad_in.row(static_cast<Eigen::Index>(s)).data();
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const double* src = dcols.row(static_cast<Eigen::Index>((s * oh + oy) * ow + ox)).data();
                    for (std::size_t ky = 0; ky < kh_; ++ky) {
                        const long iy = static_cast<long>(oy * stride_ + ky) - static_cast<long>(pad_);
                        if (iy < 0 || iy >= static_cast<long>(in_shape.height)) continue;
                        for (std::size_t kx = 0; kx < kw_; ++kx) {
                            const long ix = static_cast<long>(ox * stride_ + kx) - static_cast<long>(pad_);
                            if (ix < 0 || ix >= static_cast<long>(in_shape.width)) continue;
                            double* p = dst + (static_cast<std::size_t>(iy) * in_shape.width + static_cast<std::size_t>(ix)) * c;
                            const double* q = src + (ky * kw_ + kx) * c;
                            for (std::size_t ch = 0; ch < c; ++ch) p[ch] += q[ch];
                        }
                    }
                }
        }
        return grad_in;
    }

    void conv(const Matrix& cols, std::size_t b, Matrix& out) const
    {
        // (b*oh*ow x cout) and (b x oh*ow*cout) share the same row-major storage.
        out.resize(static_cast<Eigen::Index>(b), static_cast<Eigen::Index>(out_shape.size()));
        Eigen::Map<Matrix> flat(out.data(), cols.rows(), static_cast<Eigen::Index>(out_shape.channels));
        if (mask_) flat.noalias() = cols * weight_.value.cwiseProduct(*mask_);
        else flat.noalias() = cols * weight_.value;
        flat.rowwise() += bias_.value.row(0);
    }

    Activation act_;
    std::size_t kh_, kw_, stride_, pad_;
    Parameter weight_, bias_;
    std::optional<Matrix> mask_;
    std::size_t batch_ = 0;
    Matrix cols_, pre_, out_;
};

class MaxPoolLayer final : public Layer {
public:
    MaxPoolLayer(const LayerSpec& spec, Shape3 in) : kh_(spec.kernel_h), kw_(spec.kernel_w)
    {
        in_shape = in;
        if (kh_ == 0 || kw_ == 0 || in.height < kh_ || in.width < kw_)
            throw Error(ErrorKind::Composition, "maxpool window does not fit its input");
        out_shape = {in.height / kh_, in.width / kw_, in.channels};
    }

    Matrix forward(const Matrix& in, bool, std::mt19937_64&) override
    {
        Matrix out;
        pool(in, out, &argmax_);
        return out;
    }

    Matrix infer(const Matrix& in) const override
    {
        Matrix out;
        pool(in, out, nullptr);
        return out;
    }

    Matrix backward(const Matrix& grad_out) override
    {
        Matrix grad_in = Matrix::Zero(grad_out.rows(), static_cast<Eigen::Index>(in_shape.size()));
        for (Eigen::Index s = 0; s < grad_out.rows(); ++s)
            for (Eigen::Index j = 0; j < grad_out.cols(); ++j)
                grad_in(s, argmax_[static_cast<std::size_t>(s * grad_out.cols() + j)]) += grad_out(s, j);
        return grad_in;
    }

    LayerKind kind() const override { return LayerKind::MaxPool2d; }

private:
    void pool(const Matrix& in, Matrix& out, std::vector<Eigen::Index>* argmax) const
    {
        const std::size_t c = in_shape.channels, w = in_shape.width;
        const std::size_t oh = out_shape.height, ow = out_shape.width;
        out.resize(in.rows(), static_cast<Eigen::Index>(out_shape.size()));
        if (argmax) argmax->assign(static_cast<std::size_t>(out.size()), 0);
        for (Eigen::Index s = 0; s < in.rows(); ++s) {
            const double* src = in.row(s).data();
            double* dst = out.row(s).data();
            Eigen::Index* arg = argmax ? argmax->data() + s * out.cols() : nullptr;
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox)
                    for (std::size_t ch = 0; ch < c; ++ch) {
                        double best = -std::numeric_limits<double>::infinity();
                        std::size_t best_idx = 0;
                        for (std::size_t ky = 0; ky < kh_; ++ky) {
                            const std::size_t base = ((oy * kh_ + ky) * w + ox * kw_) * c + ch;
                            for (std::size_t kx = 0; kx < kw_; ++kx) {
                                const std::size_t idx = base + kx * c;
                                if (src[idx] > best) {
                                    best = src[idx];
                                    best_idx = idx;
                                }
                            }
                        }
                        const std::size_t o = (oy * ow + ox) * c + ch;
                        dst[o] = best;
                        if (arg) arg[o] = static_cast<Eigen::Index>(best_idx);
                    }
        }
    }

    std::size_t kh_, kw_;
    std::vector<Eigen::Index> argmax_;
};

class DropoutLayer final : public Layer {
public:
    DropoutLayer(const LayerSpec& spec, Shape3 in) : rate_(spec.rate)
    {
        if (!(rate_ >= 0.0 && rate_ < 1.0)) throw Error(ErrorKind::Composition, "dropout rate must lie in [0, 1)");
        in_shape = out_shape = in;
    }

    Matrix forward(const Matrix& in, bool train, std::mt19937_64& rng) override
    {
        if (!train || rate_ == 0.0) {
            scale_ = Matrix::Ones(in.rows(), in.cols());
            return in;
        }
        // Keep a unit when a raw 64-bit draw falls below (1 - rate) * 2^64.
        const auto threshold = static_cast<std::uint64_t>(std::ldexp(1.0 - rate_, 64) * (1.0 - 1e-16));
        const double s = 1.0 / (1.0 - rate_);
        scale_.resize(in.rows(), in.cols());
        double* out = scale_.data();
        for (Eigen::Index i = 0; i < scale_.size(); ++i) out[i] = rng() < threshold ? s : 0.0;
        return in.cwiseProduct(scale_);
    }

    Matrix infer(const Matrix& in) const override { return in; }
    Matrix backward(const Matrix& grad_out) override { return grad_out.cwiseProduct(scale_); }
    LayerKind kind() const override { return LayerKind::Dropout; }

private:
    double rate_;
    Matrix scale_;
};

class FlattenLayer final : public Layer {
public:
    explicit FlattenLayer(Shape3 in)
    {
        in_shape = in;
        out_shape = {1, 1, in.size()};
    }
    Matrix forward(const Matrix& in, bool, std::mt19937_64&) override { return in; }
    Matrix infer(const Matrix& in) const override { return in; }
    Matrix backward(const Matrix& grad_out) override { return grad_out; }
    LayerKind kind() const override { return LayerKind::Flatten; }
};

} // namespace

LayerSpec LayerSpec::dense(std::size_t in, std::size_t out, Activation act)
{
    LayerSpec s;
    s.kind = LayerKind::Dense;
    s.in = in;
    s.out = out;
    s.activation = act;
    return s;
}

LayerSpec LayerSpec::conv2d(std::size_t out_channels, std::size_t kh, std::size_t kw, Activation act, std::size_t stride,
                            std::size_t padding)
{
    LayerSpec s;
    s.kind = LayerKind::Conv2d;
    s.out_channels = out_channels;
    s.kernel_h = kh;
    s.kernel_w = kw;
    s.activation = act;
    s.stride = stride;
    s.padding = padding;
    return s;
}

LayerSpec LayerSpec::maxpool2d(std::size_t kh, std::size_t kw)
{
    LayerSpec s;
    s.kind = LayerKind::MaxPool2d;
    s.kernel_h = kh;
    s.kernel_w = kw;
    return s;
}

LayerSpec LayerSpec::dropout(double rate)
{
    LayerSpec s;
    s.kind = LayerKind::Dropout;
    s.rate = rate;
    return s;
}

LayerSpec LayerSpec::flatten()
{
    LayerSpec s;
    s.kind = LayerKind::Flatten;
    return s;
}

Network::Network(NetworkSpec spec) : spec_(std::move(spec)) { build(); }

Network::Network(const Network& other) : spec_(other.spec_)
{
    build();
    *this = other;
}

Network& Network::operator=(const Network& other)
{
    if (this == &other) return *this;
    if (layers_.size() != other.layers_.size() || spec_.input != other.spec_.input) {
        spec_ = other.spec_;
        build();
    }
    auto mine = parameters();
    auto theirs = const_cast<Network&>(other).parameters();
    for (std::size_t i = 0; i < mine.size(); ++i) {
        mine[i]->value = theirs[i]->value;
        mine[i]->grad = theirs[i]->grad;
    }
    has_forward_ = false;
    return *this;
}

void Network::build()
{
    layers_.clear();
    std::mt19937_64 rng(spec_.init_seed);
    Shape3 shape = spec_.input;
    if (shape.size() == 0) throw Error(ErrorKind::Composition, "network input has zero size");
    for (const LayerSpec& ls : spec_.layers) {
        std::unique_ptr<Layer> layer;
        switch (ls.kind) {
        case LayerKind::Dense: layer = std::make_unique<DenseLayer>(ls, shape, rng); break;
        case LayerKind::Conv2d: layer = std::make_unique<Conv2dLayer>(ls, shape, rng); break;
        case LayerKind::MaxPool2d: layer = std::make_unique<MaxPoolLayer>(ls, shape); break;
        case LayerKind::Dropout: layer = std::make_unique<DropoutLayer>(ls, shape); break;
        case LayerKind::Flatten: layer = std::make_unique<FlattenLayer>(shape); break;
        }
        shape = layer->out_shape;
        layers_.push_back(std::move(layer));
    }
    has_forward_ = false;
}

Shape3 Network::output_shape() const { return layers_.empty() ? spec_.input : layers_.back()->out_shape; }

Matrix Network::forward(const Matrix& batch, bool train, std::uint64_t rng_seed)
{
    if (static_cast<std::size_t>(batch.cols()) != spec_.input.size())
        throw Error(ErrorKind::Composition, "batch has " + std::to_string(batch.cols()) + " features, network expects "
                                                + std::to_string(spec_.input.size()));
    std::mt19937_64 rng(rng_seed);
    Matrix x = batch;
    for (auto& layer : layers_) x = layer->forward(x, train, rng);
    has_forward_ = true;
    return x;
}

Matrix Network::predict(const Matrix& batch) const
{
    if (static_cast<std::size_t>(batch.cols()) != spec_.input.size())
        throw Error(ErrorKind::Composition, "batch has " + std::to_string(batch.cols()) + " features, network expects "
                                                + std::to_string(spec_.input.size()));
    Matrix x = batch;
    for (const auto& layer : layers_) x = layer->infer(x);
    return x;
}

Matrix Network::backward(const Matrix& upstream_grad, bool input_grad)
{
    if (!has_forward_) throw Error(ErrorKind::State, "backward called without a recorded forward pass");
    for (std::size_t i = 0; i < layers_.size(); ++i) layers_[i]->skip_input_grad = i == 0 && !input_grad;
    Matrix g = upstream_grad;
    for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
    return g;
}

std::vector<Parameter*> Network::parameters()
{
    std::vector<Parameter*> out;
    for (auto& layer : layers_)
        for (Parameter* p : layer->parameters()) out.push_back(p);
    return out;
}

std::size_t Network::parameter_count() const
{
    std::size_t n = 0;
    for (Parameter* p : const_cast<Network*>(this)->parameters()) n += static_cast<std::size_t>(p->value.size());
    return n;
}

void Network::zero_grad()
{
    for (Parameter* p : parameters()) p->grad.setZero();
}

namespace {

void put_f64(std::ostream& out, double v)
{
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int b = 0; b < 8; ++b) out.put(static_cast<char>((bits >> (8 * b)) & 0xff));
}

double get_f64(std::istream& in)
{
    unsigned char buf[8];
    if (!in.read(reinterpret_cast<char*>(buf), 8)) throw Error(ErrorKind::Length, "parameter blob truncated");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{buf[b]} << (8 * b);
    return std::bit_cast<double>(bits);
}

} // namespace

void Network::save(const std::filesystem::path& descriptor, const std::filesystem::path& blob,
                   const std::map<std::string, std::string>& extra) const
{
    std::ofstream bout(blob, std::ios::binary);
    if (!bout) throw Error(ErrorKind::Io, "cannot write " + blob.string());
    nlohmann::json j;
    j["input"] = {spec_.input.height, spec_.input.width, spec_.input.channels};
    j["init_seed"] = spec_.init_seed;
    j["blob"] = blob.filename().string();
    for (const auto& [k, v] : extra) j["extra"][k] = v;

    std::size_t offset = 0;
    auto& self = const_cast<Network&>(*this);
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        const LayerSpec& ls = spec_.layers[i];
        nlohmann::json lj;
        lj["kind"] = to_string(ls.kind);
        lj["in"] = ls.in;
        lj["out"] = ls.out;
        lj["out_channels"] = ls.out_channels;
        lj["kernel"] = {ls.kernel_h, ls.kernel_w};
        lj["stride"] = ls.stride;
        lj["padding"] = ls.padding;
        lj["activation"] = to_string(ls.activation);
        lj["rate"] = ls.rate;
        lj["offset"] = offset;
        std::size_t count = 0;
        for (Parameter* p : self.layers_[i]->parameters()) {
            for (Eigen::Index k = 0; k < p->value.size(); ++k) put_f64(bout, p->value.data()[k]);
            count += static_cast<std::size_t>(p->value.size());
        }
        offset += count;
        lj["count"] = count;
        if (ls.mask) {
            lj["mask_offset"] = offset;
            lj["mask_shape"] = {ls.mask->rows(), ls.mask->cols()};
            for (Eigen::Index k = 0; k < ls.mask->size(); ++k) put_f64(bout, ls.mask->data()[k]);
            offset += static_cast<std::size_t>(ls.mask->size());
        }
        j["layers"].push_back(lj);
    }
    std::ofstream dout(descriptor);
    if (!dout) throw Error(ErrorKind::Io, "cannot write " + descriptor.string());
    dout << j.dump(2) << "\n";
}

Network Network::load(const std::filesystem::path& descriptor, const std::filesystem::path& blob)
{
    std::ifstream din(descriptor);
    if (!din) throw Error(ErrorKind::Io, "cannot open " + descriptor.string());
    const auto j = nlohmann::json::parse(din);
    std::ifstream bin(blob, std::ios::binary);
    if (!bin) throw Error(ErrorKind::Io, "cannot open " + blob.string());
    std::vector<double> values;
    while (bin.peek() != EOF) values.push_back(get_f64(bin));

    NetworkSpec spec;
    spec.input = {j["input"][0].get<std::size_t>(), j["input"][1].get<std::size_t>(), j["input"][2].get<std::size_t>()};
    spec.init_seed = j["init_seed"].get<std::uint64_t>();
    for (const auto& lj : j["layers"]) {
        LayerSpec ls;
        ls.kind = kind_from_string(lj["kind"].get<std::string>());
        ls.in = lj["in"].get<std::size_t>();
        ls.out = lj["out"].get<std::size_t>();
        ls.out_channels = lj["out_channels"].get<std::size_t>();
        ls.kernel_h = lj["kernel"][0].get<std::size_t>();
        ls.kernel_w = lj["kernel"][1].get<std::size_t>();
        ls.stride = lj["stride"].get<std::size_t>();
        ls.padding = lj["padding"].get<std::size_t>();
        ls.activation = activation_from_string(lj["activation"].get<std::string>());
        ls.rate = lj["rate"].get<double>();
        if (lj.contains("mask_offset")) {
            const auto off = lj["mask_offset"].get<std::size_t>();
            Matrix mask(lj["mask_shape"][0].get<Eigen::Index>(), lj["mask_shape"][1].get<Eigen::Index>());
            if (off + static_cast<std::size_t>(mask.size()) > values.size()) throw Error(ErrorKind::Length, "mask beyond blob end");
            std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), mask.size(), mask.data());
            ls.mask = std::move(mask);
        }
        spec.layers.push_back(std::move(ls));
    }

    Network net(std::move(spec));
    for (std::size_t i = 0; i < net.layers_.size(); ++i) {
        std::size_t off = j["layers"][i]["offset"].get<std::size_t>();
        for (Parameter* p : net.layers_[i]->parameters()) {
            if (off + static_cast<std::size_t>(p->value.size()) > values.size())
                throw Error(ErrorKind::Length, "parameters beyond blob end");
            std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(off), p->value.size(), p->value.data());
            off += static_cast<std::size_t>(p->value.size());
        }
    }
    return net;
}

void adam_step(AdamState& state, const std::vector<Parameter*>& params)
{
    if (state.m.empty()) {
        for (Parameter* p : params) {
            state.m.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
            state.v.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
        }
    }
    if (state.m.size() != params.size()) throw Error(ErrorKind::State, "Adam moments do not match the parameter list");
    ++state.step;
    const double t = static_cast<double>(state.step);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t i = 0; i < params.size(); ++i) {
        Parameter& p = *params[i];
        if (p.grad.rows() != p.value.rows() || p.grad.cols() != p.value.cols() || state.m[i].rows() != p.value.rows()
            || state.m[i].cols() != p.value.cols())
            throw Error(ErrorKind::State, "Adam moment shape mismatch");
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * p.grad;
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * p.grad.cwiseAbs2();
        p.value.array() -= state.learning_rate * (state.m[i].array() / c1)
                         / ((state.v[i].array() / c2).sqrt() + state.epsilon);
    }
}

GradCheckResult gradient_check(Network& net, const Matrix& batch, std::uint64_t seed, double h, std::size_t max_coords)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Matrix probe(batch.rows(), static_cast<Eigen::Index>(net.output_shape().size()));
    for (Eigen::Index i = 0; i < probe.size(); ++i) probe.data()[i] = normal(rng);
    // Fixed dropout draw so the objective is a deterministic function.
    const std::uint64_t dropout_seed = seed ^ 0x9e3779b97f4a7c15ULL;
    auto objective = [&](const Matrix& x) { return net.forward(x, true, dropout_seed).cwiseProduct(probe).sum(); };

    net.forward(batch, true, dropout_seed);
    const Matrix input_grad = net.backward(probe);
    auto params = net.parameters();
    std::vector<Matrix> analytic;
    for (Parameter* p : params) analytic.push_back(p->grad);

    GradCheckResult result;
    result.layer = "network";
    auto record = [&](double a, double n) {
        const double denom = std::max({std::abs(a), std::abs(n), 1e-6});
        result.max_rel_error = std::max(result.max_rel_error, std::abs(a - n) / denom);
        ++result.checked;
    };

    std::size_t total = static_cast<std::size_t>(batch.size());
    for (Parameter* p : params) total += static_cast<std::size_t>(p->value.size());
    const std::size_t stride = std::max<std::size_t>(1, total / std::max<std::size_t>(1, max_coords));

    std::size_t flat = 0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Parameter& p = *params[pi];
        for (Eigen::Index k = 0; k < p.value.size(); ++k, ++flat) {
            if (flat % stride != 0) continue;
            const double orig = p.value.data()[k];
            p.value.data()[k] = orig + h;
            const double fp = objective(batch);
            p.value.data()[k] = orig - h;
            const double fm = objective(batch);
            p.value.data()[k] = orig;
            record(analytic[pi].data()[k], (fp - fm) / (2.0 * h));
        }
    }
    Matrix x = batch;
    for (Eigen::Index k = 0; k < x.size(); ++k, ++flat) {
        if (flat % stride != 0) continue;
        const double orig = x.data()[k];
        x.data()[k] = orig + h;
        const double fp = objective(x);
        x.data()[k] = orig - h;
        const double fm = objective(x);
        x.data()[k] = orig;
        record(input_grad.data()[k], (fp - fm) / (2.0 * h));
    }
    return result;
}

namespace {

Matrix random_batch(std::size_t rows, std::size_t cols, std::mt19937_64& rng)
{
    std::normal_distribution<double> normal;
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = normal(rng);
    return m;
}

Matrix random_mask(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng)
{
    std::bernoulli_distribution on(0.6);
    Matrix m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = on(rng) ? 1.0 : 0.0;
    return m;
}

} // namespace

std::vector<GradCheckResult> gradient_check_suite(std::uint64_t seed, double h)
{
    std::mt19937_64 rng(seed);
    std::vector<GradCheckResult> results;
    auto run = [&](const std::string& name, NetworkSpec spec) {
        spec.init_seed = rng();
        Network net(std::move(spec));
        const Matrix batch = random_batch(4, net.spec().input.size(), rng);
        GradCheckResult r = gradient_check(net, batch, rng(), h, 2000);
        r.layer = name;
        results.push_back(r);
    };

    run("dense+relu", {{1, 1, 6}, {LayerSpec::dense(6, 5, Activation::ReLU), LayerSpec::dense(5, 2)}});
    run("dense+sigmoid", {{1, 1, 6}, {LayerSpec::dense(6, 5, Activation::Sigmoid), LayerSpec::dense(5, 1)}});
    {
        LayerSpec masked = LayerSpec::dense(6, 5, Activation::ReLU);
        masked.mask = random_mask(6, 5, rng);
        run("masked dense", {{1, 1, 6}, {masked, LayerSpec::dense(5, 3)}});
    }
    run("conv2d", {{5, 5, 2},
                   {LayerSpec::conv2d(3, 3, 3, Activation::ReLU), LayerSpec::flatten(), LayerSpec::dense(0, 2)}});
    run("conv2d stride/pad", {{6, 5, 2},
                              {LayerSpec::conv2d(2, 3, 2, Activation::Sigmoid, 2, 1), LayerSpec::flatten(),
                               LayerSpec::dense(0, 1)}});
    {
        LayerSpec masked = LayerSpec::conv2d(3, 3, 3, Activation::None, 1, 1);
        masked.mask = random_mask(3 * 3 * 2, 3, rng);
        run("masked conv2d", {{4, 4, 2}, {masked, LayerSpec::flatten(), LayerSpec::dense(0, 2)}});
    }
    run("maxpool2d", {{6, 6, 1},
                      {LayerSpec::conv2d(2, 3, 3), LayerSpec::maxpool2d(2, 2), LayerSpec::flatten(),
                       LayerSpec::dense(0, 1)}});
    run("dropout", {{1, 1, 8},
                    {LayerSpec::dense(8, 6, Activation::ReLU), LayerSpec::dropout(0.25), LayerSpec::dense(6, 1)}});
    run("cnn score", {{8, 8, 1},
                      {LayerSpec::conv2d(4, 3, 3, Activation::ReLU), LayerSpec::maxpool2d(2, 2), LayerSpec::dropout(0.25),
                       LayerSpec::flatten(), LayerSpec::dense(0, 6, Activation::ReLU), LayerSpec::dropout(0.25),
                       LayerSpec::dense(6, 1)}});
    return results;
}

} // namespace miscale::nn
