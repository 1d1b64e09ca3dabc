#pragma once

// Canonical-mapping harmonizer: a shared forward generator G that maps any
// source-site slice into the reference domain, a site-conditioned identity
// generator F that maps reference-domain slices back to a named source site,
// and one least-squares patch discriminator per domain. Model classes are
// templated on the scalar type so gradient checks can run in double.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "canmap/adam.hpp"
#include "canmap/losses.hpp"
#include "canmap/nn.hpp"
#include "canmap/volume.hpp"

namespace canmap {

struct GeneratorSpec {
    int image_size = 64;
    int base_channels = 32;
    int n_downsample = 2; // stride-2 convolutions
    int n_res_blocks = 4; // 4 at desk scale, 9 at full scale
    int embed_dim = 16;   // site embedding width, reshaped to a 4x4 seed

    int latent_channels() const { return base_channels << n_downsample; }
    int latent_size() const { return image_size >> n_downsample; }
    // transposed-conv doublings from the 4x4 embedding seed to the latent map
    int embed_upsamples() const;
    void validate(bool conditional) const;

    nlohmann::json to_json() const;
    static GeneratorSpec from_json(const nlohmann::json& j);
};

struct DiscriminatorSpec {
    int base_channels = 64;
    int n_layers = 3; // stride-2 conv layers before the output conv
    double lrelu_slope = 0.2;

    nlohmann::json to_json() const;
    static DiscriminatorSpec from_json(const nlohmann::json& j);
};

struct HarmonizerTrainConfig {
    double lambda_cyc = 10.0;
    double lr = 2e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    int pool_size = 50; // fake-image history; 0 disables
    int batch_size = 2;
    int steps = 1500;
    uint64_t seed = 7;
    int n_slices = 8; // axial window fed to training
    int checkpoint_interval = 0; // extra checkpoints every N steps; 0 = end only
    GeneratorSpec gen;
    DiscriminatorSpec disc;

    nlohmann::json to_json() const;
    static HarmonizerTrainConfig from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------------------
// Model parts
// ---------------------------------------------------------------------------

template <class T>
class Generator {
public:
    using Ctx = typename nn::Sequential<T>::Ctx;

    Generator() = default;
    Generator(const GeneratorSpec& spec, Rng rng, const std::string& prefix);

    Tensor<T> forward(const Tensor<T>& x, Ctx& ctx, bool training) {
        return net_.forward(x, ctx, training);
    }
    Tensor<T> backward(Ctx& ctx, const Tensor<T>& gy, bool accum_params) {
        return net_.backward(ctx, gy, accum_params);
    }
    void collect(std::vector<nn::Param<T>*>& out) { net_.collect(out); }
    nn::Sequential<T>& net() { return net_; }

private:
    nn::Sequential<T> net_;
};

// learnable per-site vector, upscaled to one latent-resolution channel;
// depends only on the site code and its own parameters, never on the image
template <class T>
class SiteEmbedding {
public:
    struct Ctx {
        typename nn::Sequential<T>::Ctx up;
        int site = -1;
    };

    SiteEmbedding() = default;
    SiteEmbedding(int n_sites, const GeneratorSpec& spec, Rng rng, const std::string& prefix);

    Tensor<T> forward(int site, Ctx& ctx, bool training);
    void backward(Ctx& ctx, const Tensor<T>& d_channel, bool accum_params);

    void collect(std::vector<nn::Param<T>*>& out) {
        out.push_back(&table_);
        up_.collect(out);
    }

    int sites() const { return n_sites_; }

private:
    int n_sites_ = 0;
    int dim_ = 0;
    nn::Param<T> table_; // [K, d]
    nn::Sequential<T> up_;
};

// F: encoder -> append site channel -> residual trunk -> decoder
template <class T>
class CondGenerator {
public:
    struct Ctx {
        typename nn::Sequential<T>::Ctx enc, trunk, dec;
        typename SiteEmbedding<T>::Ctx emb;
        int latent_c = 0;
    };

    CondGenerator() = default;
    CondGenerator(int n_sites, const GeneratorSpec& spec, Rng rng, const std::string& prefix);

    Tensor<T> forward(const Tensor<T>& x, int site, Ctx& ctx, bool training);
    Tensor<T> backward(Ctx& ctx, const Tensor<T>& gy, bool accum_params);

    void collect(std::vector<nn::Param<T>*>& out) {
        enc_.collect(out);
        trunk_.collect(out);
        dec_.collect(out);
        emb_.collect(out);
    }

    SiteEmbedding<T>& embedding() { return emb_; }

private:
    nn::Sequential<T> enc_, trunk_, dec_;
    SiteEmbedding<T> emb_;
};

template <class T>
class Discriminator {
public:
    using Ctx = typename nn::Sequential<T>::Ctx;

    Discriminator() = default;
    Discriminator(const DiscriminatorSpec& spec, int image_size, Rng rng,
                  const std::string& prefix);

    Tensor<T> forward(const Tensor<T>& x, Ctx& ctx, bool training) {
        return net_.forward(x, ctx, training);
    }
    Tensor<T> backward(Ctx& ctx, const Tensor<T>& gy, bool accum_params) {
        return net_.backward(ctx, gy, accum_params);
    }
    void collect(std::vector<nn::Param<T>*>& out) { net_.collect(out); }

private:
    nn::Sequential<T> net_;
};

template <class T>
struct HarmonizerModelT {
    GeneratorSpec spec;
    DiscriminatorSpec disc_spec;
    int n_sites = 0;                     // K source sites
    std::vector<std::string> site_names; // source site names, index = code
    std::string reference_name;
    int n_slices = 8; // axial window used at train time, reused at inference

    Generator<T> g;
    CondGenerator<T> f;
    Discriminator<T> d_ref;
    std::vector<Discriminator<T>> d_src; // one per source site

    static HarmonizerModelT build(const GeneratorSpec& spec, const DiscriminatorSpec& dspec,
                                  int n_sites, uint64_t seed);

    std::vector<nn::Param<T>*> generator_params();
    std::vector<nn::Param<T>*> all_params(); // checkpoint order
};

using HarmonizerModel = HarmonizerModelT<float>;

// ---------------------------------------------------------------------------
// Operations
// ---------------------------------------------------------------------------

// conditioning channel for one site code (shape [1,1,latent,latent])
template <class T>
Tensor<T> embed_site(HarmonizerModelT<T>& model, const SiteCode& code) {
    if (code.count != model.n_sites)
        throw std::invalid_argument("embed_site: code for K=" + std::to_string(code.count) +
                                    " but model has K=" + std::to_string(model.n_sites));
    typename SiteEmbedding<T>::Ctx ctx;
    return model.f.embedding().forward(code.index, ctx, false);
}

// G applied to one normalized slice [S,S]; no site code, G is shared
template <class T>
Tensor<T> forward_harmonize(HarmonizerModelT<T>& model, const Tensor<T>& slice) {
    const int S = model.spec.image_size;
    if (slice.ndim() != 2 || slice.dim(0) != S || slice.dim(1) != S)
        throw std::invalid_argument("forward_harmonize: expected a " + std::to_string(S) + "x" +
                                    std::to_string(S) + " slice, got " + shape_str(slice.shape));
    Tensor<T> x = slice;
    x.shape = {1, 1, S, S};
    typename Generator<T>::Ctx ctx;
    Tensor<T> y = model.g.forward(x, ctx, false);
    y.shape = {S, S};
    return y;
}

// F applied to one reference-domain slice with a site code
template <class T>
Tensor<T> reverse_map(HarmonizerModelT<T>& model, const Tensor<T>& slice, const SiteCode& code) {
    const int S = model.spec.image_size;
    if (slice.ndim() != 2 || slice.dim(0) != S || slice.dim(1) != S)
        throw std::invalid_argument("reverse_map: expected a " + std::to_string(S) + "x" +
                                    std::to_string(S) + " slice, got " + shape_str(slice.shape));
    if (code.count != model.n_sites)
        throw std::invalid_argument("reverse_map: site code K mismatch");
    Tensor<T> x = slice;
    x.shape = {1, 1, S, S};
    typename CondGenerator<T>::Ctx ctx;
    Tensor<T> y = model.f.forward(x, code.index, ctx, false);
    y.shape = {S, S};
    return y;
}

// mean|x_rec - x| + mean|y_rec - y|
template <class T>
double cycle_loss(const Tensor<T>& x, const Tensor<T>& x_rec, const Tensor<T>& y,
                  const Tensor<T>& y_rec) {
    return nn::l1_loss(x_rec, x, static_cast<Tensor<T>*>(nullptr)) +
           nn::l1_loss(y_rec, y, static_cast<Tensor<T>*>(nullptr));
}

// least-squares adversarial pair for one discriminator; the fake batch is
// treated as data (no generator gradients flow from the d_loss term)
template <class T>
std::pair<double, double> adversarial_losses(Discriminator<T>& d, const Tensor<T>& real,
                                             const Tensor<T>& fake) {
    check_same_shape(real, fake, "adversarial_losses");
    typename Discriminator<T>::Ctx c1, c2;
    Tensor<T> out_real = d.forward(real, c1, false);
    Tensor<T> out_fake = d.forward(fake, c2, false);
    double d_loss = nn::lsgan_d_loss(out_real, out_fake, static_cast<Tensor<T>*>(nullptr),
                                     static_cast<Tensor<T>*>(nullptr));
    double g_loss = nn::lsgan_g_loss(out_fake, static_cast<Tensor<T>*>(nullptr));
    return {d_loss, g_loss};
}

// ---------------------------------------------------------------------------
// Training / inference over datasets (float)
// ---------------------------------------------------------------------------

struct HarmonizerStepLosses {
    int64_t step = 0;
    int site = 0;
    double d_ref = 0, d_src = 0;
    double g_adv_ref = 0, g_adv_src = 0;
    double cycle = 0;
    double g_total = 0;
};

struct SliceDataset {
    std::string site_name;
    std::vector<Tensorf> slices; // each [S,S], already normalized
};

struct HarmonizerTrainResult {
    HarmonizerModel model;
    std::vector<HarmonizerStepLosses> history;
};

// slices for every manifest row of a site/split, flattened
SliceDataset collect_slices(const Manifest& m, const std::string& site, const std::string& split,
                            int n_slices, int image_size);

// sources[k] provides site code k; reference is the target domain.
// checkpoint_dir may be empty (no intermediate checkpoints are written).
HarmonizerTrainResult train_harmonizer(const std::vector<SliceDataset>& sources,
                                       const SliceDataset& reference,
                                       const HarmonizerTrainConfig& cfg,
                                       const std::string& reference_name,
                                       const std::string& checkpoint_dir = "");

// forward-harmonize every volume in the manifest; harmonized volumes live in
// the model intensity space and carry the same subject metadata
Manifest harmonize_dataset(HarmonizerModel& model, const Manifest& manifest,
                           const std::string& out_dir);

void save_harmonizer(const HarmonizerModel& model, const std::string& path);
HarmonizerModel load_harmonizer(const std::string& path);

void write_harmonizer_history(const std::vector<HarmonizerStepLosses>& h,
                              const std::string& path);

// ---------------------------------------------------------------------------
// template implementations
// ---------------------------------------------------------------------------

template <class T>
Generator<T>::Generator(const GeneratorSpec& spec, Rng rng, const std::string& prefix) {
    spec.validate(false);
    const int c = spec.base_channels;
    using namespace nn;
    net_.add(std::make_unique<Conv2d<T>>(prefix + ".stem", 1, c, 7, 1, 3, kern::Pad::reflect,
                                         rng));
    net_.add(std::make_unique<InstanceNorm2d<T>>(prefix + ".stem_norm"));
    net_.add(std::make_unique<Activation<T>>(prefix + ".stem_act", Act::relu));
    int ch = c;
    for (int i = 0; i < spec.n_downsample; ++i) {
        net_.add(std::make_unique<Conv2d<T>>(prefix + ".down" + std::to_string(i), ch, ch * 2, 3,
                                             2, 1, kern::Pad::zero, rng));
        net_.add(std::make_unique<InstanceNorm2d<T>>(prefix + ".down" + std::to_string(i) + "_norm"));
        net_.add(std::make_unique<Activation<T>>(prefix + ".down" + std::to_string(i) + "_act",
                                                 Act::relu));
        ch *= 2;
    }
    for (int i = 0; i < spec.n_res_blocks; ++i) {
        std::string rn = prefix + ".res" + std::to_string(i);
        Sequential<T> body;
        body.add(std::make_unique<Conv2d<T>>(rn + ".c1", ch, ch, 3, 1, 1, kern::Pad::reflect, rng));
        body.add(std::make_unique<InstanceNorm2d<T>>(rn + ".n1"));
        body.add(std::make_unique<Activation<T>>(rn + ".a1", Act::relu));
        body.add(std::make_unique<Conv2d<T>>(rn + ".c2", ch, ch, 3, 1, 1, kern::Pad::reflect, rng));
        body.add(std::make_unique<InstanceNorm2d<T>>(rn + ".n2"));
        net_.add(std::make_unique<ResidualBlock<T>>(rn, std::move(body), nullptr, false));
    }
    for (int i = 0; i < spec.n_downsample; ++i) {
        net_.add(std::make_unique<ConvTranspose2d<T>>(prefix + ".up" + std::to_string(i), ch,
                                                      ch / 2, 4, 2, 1, rng));
        net_.add(std::make_unique<InstanceNorm2d<T>>(prefix + ".up" + std::to_string(i) + "_norm"));
        net_.add(std::make_unique<Activation<T>>(prefix + ".up" + std::to_string(i) + "_act",
                                                 Act::relu));
        ch /= 2;
    }
    net_.add(std::make_unique<Conv2d<T>>(prefix + ".out", ch, 1, 7, 1, 3, kern::Pad::reflect, rng));
    net_.add(std::make_unique<Activation<T>>(prefix + ".out_act", Act::tanh));
}

template <class T>
SiteEmbedding<T>::SiteEmbedding(int n_sites, const GeneratorSpec& spec, Rng rng,
                                const std::string& prefix)
    : n_sites_(n_sites), dim_(spec.embed_dim) {
    if (n_sites < 1) throw std::invalid_argument("site embedding needs K >= 1");
    table_.name = prefix + ".table";
    table_.init_shape({n_sites, dim_});
    nn::init_normal(table_.v, rng, 1.0);
    const int n_up = spec.embed_upsamples();
    for (int i = 0; i < n_up; ++i) {
        const int cin = i == 0 ? 1 : 8;
        const int cout = i + 1 == n_up ? 1 : 8;
        up_.add(std::make_unique<nn::ConvTranspose2d<T>>(prefix + ".up" + std::to_string(i), cin,
                                                         cout, 4, 2, 1, rng));
        if (i + 1 < n_up)
            up_.add(std::make_unique<nn::Activation<T>>(prefix + ".up" + std::to_string(i) + "_act",
                                                        nn::Act::relu));
    }
}

template <class T>
Tensor<T> SiteEmbedding<T>::forward(int site, Ctx& ctx, bool training) {
    if (site < 0 || site >= n_sites_)
        throw std::invalid_argument("site index " + std::to_string(site) + " out of range (K=" +
                                    std::to_string(n_sites_) + ")");
    ctx.site = site;
    const int seed_hw = static_cast<int>(std::sqrt(double(dim_)));
    Tensor<T> seed({1, 1, seed_hw, seed_hw});
    for (int i = 0; i < dim_; ++i) seed[i] = table_.v[static_cast<int64_t>(site) * dim_ + i];
    if (up_.size() == 0) {
        ctx.up.clear();
        return seed;
    }
    return up_.forward(seed, ctx.up, training);
}

template <class T>
void SiteEmbedding<T>::backward(Ctx& ctx, const Tensor<T>& d_channel, bool accum_params) {
    Tensor<T> d_seed =
        up_.size() == 0 ? d_channel : up_.backward(ctx.up, d_channel, accum_params);
    if (accum_params)
        for (int i = 0; i < dim_; ++i)
            table_.g[static_cast<int64_t>(ctx.site) * dim_ + i] += d_seed[i];
}

template <class T>
CondGenerator<T>::CondGenerator(int n_sites, const GeneratorSpec& spec, Rng rng,
                                const std::string& prefix) {
    spec.validate(true);
    const int c = spec.base_channels;
    using namespace nn;
    enc_.add(std::make_unique<Conv2d<T>>(prefix + ".stem", 1, c, 7, 1, 3, kern::Pad::reflect, rng));
    enc_.add(std::make_unique<InstanceNorm2d<T>>(prefix + ".stem_norm"));
    enc_.add(std::make_unique<Activation<T>>(prefix + ".stem_act", Act::relu));
    int ch = c;
    for (int i = 0; i < spec.n_downsample; ++i) {
        enc_.add(std::make_unique<Conv2d<T>>(prefix + ".down" + std::to_string(i), ch, ch * 2, 3, 2,
                                             1, kern::Pad::zero, rng));
        enc_.add(std::make_unique<InstanceNorm2d<T>>(prefix + ".down" + std::to_string(i) + "_norm"));
        enc_.add(std::make_unique<Activation<T>>(prefix + ".down" + std::to_string(i) + "_act",
                                                 Act::relu));
        ch *= 2;
    }
    // the trunk sees the appended site channel: latent + 1
    const int tc = ch + 1;
    for (int i = 0; i < spec.n_res_blocks; ++i) {
        std::string rn = prefix + ".res" + std::to_string(i);
        Sequential<T> body;
        body.add(std::make_unique<Conv2d<T>>(rn + ".c1", tc, tc, 3, 1, 1, kern::Pad::reflect, rng));
        body.add(std::make_unique<InstanceNorm2d<T>>(rn + ".n1"));
        body.add(std::make_unique<Activation<T>>(rn + ".a1", Act::relu));
        body.add(std::make_unique<Conv2d<T>>(rn + ".c2", tc, tc, 3, 1, 1, kern::Pad::reflect, rng));
        body.add(std::make_unique<InstanceNorm2d<T>>(rn + ".n2"));
        trunk_.add(std::make_unique<ResidualBlock<T>>(rn, std::move(body), nullptr, false));
    }
    int dch = tc;
    for (int i = 0; i < spec.n_downsample; ++i) {
        const int cout = ch / 2; // mirror G's channel schedule below the latent
        dec_.add(std::make_unique<ConvTranspose2d<T>>(prefix + ".up" + std::to_string(i), dch, cout,
                                                      4, 2, 1, rng));
        dec_.add(std::make_unique<InstanceNorm2d<T>>(prefix + ".up" + std::to_string(i) + "_norm"));
        dec_.add(std::make_unique<Activation<T>>(prefix + ".up" + std::to_string(i) + "_act",
                                                 Act::relu));
        ch /= 2;
        dch = ch;
    }
    dec_.add(std::make_unique<Conv2d<T>>(prefix + ".out", ch, 1, 7, 1, 3, kern::Pad::reflect, rng));
    dec_.add(std::make_unique<Activation<T>>(prefix + ".out_act", Act::tanh));
    emb_ = SiteEmbedding<T>(n_sites, spec, rng.child(0xe5be), prefix + ".embed");
}

template <class T>
Tensor<T> CondGenerator<T>::forward(const Tensor<T>& x, int site, Ctx& ctx, bool training) {
    Tensor<T> h = enc_.forward(x, ctx.enc, training);
    Tensor<T> chan = emb_.forward(site, ctx.emb, training);
    const int N = h.dim(0), C = h.dim(1), H = h.dim(2), W = h.dim(3);
    if (chan.dim(2) != H || chan.dim(3) != W)
        throw std::logic_error("site channel resolution does not match the latent map");
    ctx.latent_c = C;
    Tensor<T> hcat({N, C + 1, H, W});
    const int64_t plane = static_cast<int64_t>(H) * W;
    for (int n = 0; n < N; ++n) {
        std::copy_n(h.ptr() + static_cast<int64_t>(n) * C * plane, C * plane,
                    hcat.ptr() + static_cast<int64_t>(n) * (C + 1) * plane);
        std::copy_n(chan.ptr(), plane,
                    hcat.ptr() + (static_cast<int64_t>(n) * (C + 1) + C) * plane);
    }
    Tensor<T> t = trunk_.forward(hcat, ctx.trunk, training);
    return dec_.forward(t, ctx.dec, training);
}

template <class T>
Tensor<T> CondGenerator<T>::backward(Ctx& ctx, const Tensor<T>& gy, bool accum_params) {
    Tensor<T> dt = dec_.backward(ctx.dec, gy, accum_params);
    Tensor<T> dhcat = trunk_.backward(ctx.trunk, dt, accum_params);
    const int N = dhcat.dim(0), C = ctx.latent_c, H = dhcat.dim(2), W = dhcat.dim(3);
    const int64_t plane = static_cast<int64_t>(H) * W;
    Tensor<T> dh({N, C, H, W});
    Tensor<T> dchan({1, 1, H, W}, T(0));
    for (int n = 0; n < N; ++n) {
        std::copy_n(dhcat.ptr() + static_cast<int64_t>(n) * (C + 1) * plane, C * plane,
                    dh.ptr() + static_cast<int64_t>(n) * C * plane);
        kern::add(dchan.ptr(), dhcat.ptr() + (static_cast<int64_t>(n) * (C + 1) + C) * plane,
                  dchan.ptr(), plane);
    }
    emb_.backward(ctx.emb, dchan, accum_params);
    return enc_.backward(ctx.enc, dh, accum_params);
}

template <class T>
Discriminator<T>::Discriminator(const DiscriminatorSpec& spec, int image_size, Rng rng,
                                const std::string& prefix) {
    using namespace nn;
    int size = image_size;
    int ch = 1;
    int next = spec.base_channels;
    for (int i = 0; i < spec.n_layers; ++i) {
        net_.add(std::make_unique<Conv2d<T>>(prefix + ".c" + std::to_string(i), ch, next, 4, 2, 1,
                                             kern::Pad::zero, rng));
        if (i > 0) net_.add(std::make_unique<InstanceNorm2d<T>>(prefix + ".n" + std::to_string(i)));
        net_.add(std::make_unique<Activation<T>>(prefix + ".a" + std::to_string(i), Act::lrelu,
                                                 spec.lrelu_slope));
        ch = next;
        next = next * 2;
        size = kern::conv_out_dim(size, 4, 2, 1);
    }
    const int out_size = kern::conv_out_dim(size, 4, 1, 1);
    if (out_size <= 1)
        throw std::invalid_argument("discriminator collapses to a global decision at image size " +
                                    std::to_string(image_size) + "; reduce n_layers");
    net_.add(std::make_unique<Conv2d<T>>(prefix + ".out", ch, 1, 4, 1, 1, kern::Pad::zero, rng));
}

template <class T>
HarmonizerModelT<T> HarmonizerModelT<T>::build(const GeneratorSpec& spec,
                                               const DiscriminatorSpec& dspec, int n_sites,
                                               uint64_t seed) {
    if (n_sites < 1) throw std::invalid_argument("harmonizer needs at least one source site");
    HarmonizerModelT m;
    m.spec = spec;
    m.disc_spec = dspec;
    m.n_sites = n_sites;
    Rng root(seed);
    m.g = Generator<T>(spec, root.child(1), "g");
    m.f = CondGenerator<T>(n_sites, spec, root.child(2), "f");
    m.d_ref = Discriminator<T>(dspec, spec.image_size, root.child(3), "d_ref");
    for (int k = 0; k < n_sites; ++k)
        m.d_src.emplace_back(dspec, spec.image_size, root.child(4 + k),
                             "d_src" + std::to_string(k));
    return m;
}

template <class T>
std::vector<nn::Param<T>*> HarmonizerModelT<T>::generator_params() {
    std::vector<nn::Param<T>*> p;
    g.collect(p);
    f.collect(p);
    return p;
}

template <class T>
std::vector<nn::Param<T>*> HarmonizerModelT<T>::all_params() {
    std::vector<nn::Param<T>*> p = generator_params();
    d_ref.collect(p);
    for (auto& d : d_src) d.collect(p);
    return p;
}

} // namespace canmap
