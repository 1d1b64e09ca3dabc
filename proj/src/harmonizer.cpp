#include "canmap/harmonizer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "canmap/checkpoint.hpp"
#include "canmap/common.hpp"
#include "canmap/slices.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace canmap {

int GeneratorSpec::embed_upsamples() const {
    const int seed = static_cast<int>(std::lround(std::sqrt(double(embed_dim))));
    int s = seed, n = 0;
    while (s < latent_size()) {
        s *= 2;
        ++n;
    }
    return n;
}

void GeneratorSpec::validate(bool conditional) const {
    if (image_size < 8) throw std::invalid_argument("generator: image_size must be >= 8");
    if (base_channels < 1) throw std::invalid_argument("generator: base_channels must be >= 1");
    if (n_downsample < 1) throw std::invalid_argument("generator: n_downsample must be >= 1");
    if (n_res_blocks < 0) throw std::invalid_argument("generator: n_res_blocks must be >= 0");
    if (image_size % (1 << n_downsample) != 0)
        throw std::invalid_argument("generator: image_size " + std::to_string(image_size) +
                                    " not divisible by 2^" + std::to_string(n_downsample));
    const int seed = static_cast<int>(std::lround(std::sqrt(double(embed_dim))));
    if (seed * seed != embed_dim)
        throw std::invalid_argument("generator: embed_dim must be a perfect square");
    if (conditional) {
        int s = seed;
        while (s < latent_size()) s *= 2;
        if (s != latent_size())
            throw std::invalid_argument(
                "conditional generator: latent extent " + std::to_string(latent_size()) +
                " is not the embedding seed " + std::to_string(seed) + " doubled a whole number of times");
    }
}

json GeneratorSpec::to_json() const {
    return json{{"image_size", image_size},
                {"base_channels", base_channels},
                {"n_downsample", n_downsample},
                {"n_res_blocks", n_res_blocks},
                {"embed_dim", embed_dim}};
}

GeneratorSpec GeneratorSpec::from_json(const json& j) {
    GeneratorSpec s;
    s.image_size = j.value("image_size", s.image_size);
    s.base_channels = j.value("base_channels", s.base_channels);
    s.n_downsample = j.value("n_downsample", s.n_downsample);
    s.n_res_blocks = j.value("n_res_blocks", s.n_res_blocks);
    s.embed_dim = j.value("embed_dim", s.embed_dim);
    return s;
}

json DiscriminatorSpec::to_json() const {
    return json{{"base_channels", base_channels},
                {"n_layers", n_layers},
                {"lrelu_slope", lrelu_slope}};
}

DiscriminatorSpec DiscriminatorSpec::from_json(const json& j) {
    DiscriminatorSpec s;
    s.base_channels = j.value("base_channels", s.base_channels);
    s.n_layers = j.value("n_layers", s.n_layers);
    s.lrelu_slope = j.value("lrelu_slope", s.lrelu_slope);
    return s;
}

json HarmonizerTrainConfig::to_json() const {
    return json{{"lambda_cyc", lambda_cyc},
                {"lr", lr},
                {"beta1", beta1},
                {"beta2", beta2},
                {"pool_size", pool_size},
                {"batch_size", batch_size},
                {"steps", steps},
                {"seed", seed},
                {"n_slices", n_slices},
                {"checkpoint_interval", checkpoint_interval},
                {"generator", gen.to_json()},
                {"discriminator", disc.to_json()}};
}

HarmonizerTrainConfig HarmonizerTrainConfig::from_json(const json& j) {
    HarmonizerTrainConfig c;
    c.lambda_cyc = j.value("lambda_cyc", c.lambda_cyc);
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.pool_size = j.value("pool_size", c.pool_size);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.steps = j.value("steps", c.steps);
    c.seed = j.value("seed", c.seed);
    c.n_slices = j.value("n_slices", c.n_slices);
    c.checkpoint_interval = j.value("checkpoint_interval", c.checkpoint_interval);
    if (j.contains("generator")) c.gen = GeneratorSpec::from_json(j["generator"]);
    if (j.contains("discriminator")) c.disc = DiscriminatorSpec::from_json(j["discriminator"]);
    if (c.lambda_cyc < 0) throw std::invalid_argument("lambda_cyc must be >= 0");
    if (c.pool_size < 0) throw std::invalid_argument("pool_size must be >= 0");
    return c;
}

namespace {

// history of generated fakes replayed to the discriminators; with
// probability 1/2 a query swaps the incoming fake for a stored one
class ImagePool {
public:
    ImagePool(int capacity, Rng rng) : cap_(capacity), rng_(rng) {}

    Tensorf query(const Tensorf& batch) {
        if (cap_ == 0) return batch;
        const int N = batch.dim(0);
        const int64_t stride = batch.size() / N;
        Tensorf out = batch;
        for (int n = 0; n < N; ++n) {
            const float* img = batch.ptr() + n * stride;
            if (static_cast<int>(buf_.size()) < cap_) {
                buf_.emplace_back(img, img + stride);
            } else if (rng_.uniform() >= 0.5) {
                const size_t j = rng_.index(buf_.size());
                std::copy(buf_[j].begin(), buf_[j].end(), out.ptr() + n * stride);
                buf_[j].assign(img, img + stride);
            }
        }
        return out;
    }

private:
    int cap_;
    Rng rng_;
    std::vector<std::vector<float>> buf_;
};

Tensorf make_batch(const SliceDataset& ds, Rng& rng, int batch, int image_size) {
    Tensorf out({batch, 1, image_size, image_size});
    const int64_t plane = static_cast<int64_t>(image_size) * image_size;
    for (int b = 0; b < batch; ++b) {
        const Tensorf& s = ds.slices[rng.index(ds.slices.size())];
        std::copy_n(s.ptr(), plane, out.ptr() + b * plane);
    }
    return out;
}

} // namespace

SliceDataset collect_slices(const Manifest& m, const std::string& site, const std::string& split,
                            int n_slices, int image_size) {
    SliceDataset ds;
    ds.site_name = site;
    for (const auto* r : m.rows(site, split)) {
        Volume v = m.load_record(*r);
        for (auto& s : extract_middle_slices(v, n_slices, image_size))
            ds.slices.push_back(std::move(s.pixels));
    }
    return ds;
}

HarmonizerTrainResult train_harmonizer(const std::vector<SliceDataset>& sources,
                                       const SliceDataset& reference,
                                       const HarmonizerTrainConfig& cfg,
                                       const std::string& reference_name,
                                       const std::string& checkpoint_dir) {
    if (sources.empty()) throw std::invalid_argument("train_harmonizer: no source sites");
    for (const auto& s : sources)
        if (s.slices.empty())
            throw std::invalid_argument("train_harmonizer: empty dataset for site '" +
                                        s.site_name + "'");
    if (reference.slices.empty())
        throw std::invalid_argument("train_harmonizer: empty reference dataset");
    if (cfg.batch_size < 1) throw std::invalid_argument("train_harmonizer: batch_size must be >= 1");

    const int K = static_cast<int>(sources.size());
    const int S = cfg.gen.image_size;

    HarmonizerTrainResult res;
    res.model = HarmonizerModel::build(cfg.gen, cfg.disc, K, derive_seed(cfg.seed, 0x10de1));
    HarmonizerModel& m = res.model;
    m.reference_name = reference_name;
    m.n_slices = cfg.n_slices;
    for (const auto& s : sources) m.site_names.push_back(s.site_name);

    nn::Adam<float> adam_g(m.generator_params(), cfg.lr, cfg.beta1, cfg.beta2);
    std::vector<nn::Param<float>*> dref_params;
    m.d_ref.collect(dref_params);
    nn::Adam<float> adam_dref(dref_params, cfg.lr, cfg.beta1, cfg.beta2);
    std::vector<nn::Adam<float>> adam_dsrc;
    for (int k = 0; k < K; ++k) {
        std::vector<nn::Param<float>*> p;
        m.d_src[k].collect(p);
        adam_dsrc.emplace_back(std::move(p), cfg.lr, cfg.beta1, cfg.beta2);
    }

    Rng root(cfg.seed);
    Rng site_rng = root.child(1);
    Rng x_rng = root.child(2);
    Rng y_rng = root.child(3);
    ImagePool pool_ref(cfg.pool_size, root.child(4));
    std::vector<ImagePool> pool_src;
    for (int k = 0; k < K; ++k) pool_src.emplace_back(cfg.pool_size, root.child(5, k));

    if (!checkpoint_dir.empty()) fs::create_directories(checkpoint_dir);

    for (int64_t step = 0; step < cfg.steps; ++step) {
        const int site = K == 1 ? 0 : static_cast<int>(site_rng.index(K));
        Tensorf x = make_batch(sources[site], x_rng, cfg.batch_size, S);
        Tensorf y = make_batch(reference, y_rng, cfg.batch_size, S);

        // generator forwards (kept for the generator update below)
        Generator<float>::Ctx ctx_g1, ctx_g2;
        CondGenerator<float>::Ctx ctx_f1, ctx_f2;
        Tensorf fake_y = m.g.forward(x, ctx_g1, true);
        Tensorf rec_x = m.f.forward(fake_y, site, ctx_f1, true);
        Tensorf fake_x = m.f.forward(y, site, ctx_f2, true);
        Tensorf rec_y = m.g.forward(fake_x, ctx_g2, true);

        // --- discriminators first, on pooled detached fakes ---
        HarmonizerStepLosses losses;
        losses.step = step;
        losses.site = site;
        {
            Tensorf pooled = pool_ref.query(fake_y);
            Discriminator<float>::Ctx cr, cf;
            Tensorf out_real = m.d_ref.forward(y, cr, true);
            Tensorf out_fake = m.d_ref.forward(pooled, cf, true);
            Tensorf d_real, d_fake;
            losses.d_ref = nn::lsgan_d_loss(out_real, out_fake, &d_real, &d_fake);
            adam_dref.zero_grad();
            m.d_ref.backward(cr, d_real, true);
            m.d_ref.backward(cf, d_fake, true);
            adam_dref.step();
        }
        {
            Tensorf pooled = pool_src[site].query(fake_x);
            Discriminator<float>::Ctx cr, cf;
            Tensorf out_real = m.d_src[site].forward(x, cr, true);
            Tensorf out_fake = m.d_src[site].forward(pooled, cf, true);
            Tensorf d_real, d_fake;
            losses.d_src = nn::lsgan_d_loss(out_real, out_fake, &d_real, &d_fake);
            adam_dsrc[site].zero_grad();
            m.d_src[site].backward(cr, d_real, true);
            m.d_src[site].backward(cf, d_fake, true);
            adam_dsrc[site].step();
        }

        // --- generators: adversarial terms through the updated critics ---
        adam_g.zero_grad();
        Tensorf d_fake_y_adv, d_fake_x_adv;
        {
            Discriminator<float>::Ctx c;
            Tensorf out = m.d_ref.forward(fake_y, c, true);
            Tensorf dout;
            losses.g_adv_ref = nn::lsgan_g_loss(out, &dout);
            d_fake_y_adv = m.d_ref.backward(c, dout, false); // input grad only
        }
        {
            Discriminator<float>::Ctx c;
            Tensorf out = m.d_src[site].forward(fake_x, c, true);
            Tensorf dout;
            losses.g_adv_src = nn::lsgan_g_loss(out, &dout);
            d_fake_x_adv = m.d_src[site].backward(c, dout, false);
        }

        Tensorf d_rec_x, d_rec_y;
        const double cyc_x = nn::l1_loss(rec_x, x, &d_rec_x);
        const double cyc_y = nn::l1_loss(rec_y, y, &d_rec_y);
        losses.cycle = cyc_x + cyc_y;
        losses.g_total = losses.g_adv_ref + losses.g_adv_src + cfg.lambda_cyc * losses.cycle;

        const float lam = static_cast<float>(cfg.lambda_cyc);
        // path y -> fake_x -> rec_y
        kern::scale(lam, d_rec_y.ptr(), d_rec_y.size());
        Tensorf d_fake_x_cyc = m.g.backward(ctx_g2, d_rec_y, true);
        kern::add(d_fake_x_cyc.ptr(), d_fake_x_adv.ptr(), d_fake_x_cyc.ptr(), d_fake_x_cyc.size());
        m.f.backward(ctx_f2, d_fake_x_cyc, true);
        // path x -> fake_y -> rec_x
        kern::scale(lam, d_rec_x.ptr(), d_rec_x.size());
        Tensorf d_fake_y_cyc = m.f.backward(ctx_f1, d_rec_x, true);
        kern::add(d_fake_y_cyc.ptr(), d_fake_y_adv.ptr(), d_fake_y_cyc.ptr(), d_fake_y_cyc.size());
        m.g.backward(ctx_g1, d_fake_y_cyc, true);
        adam_g.step();

        const double probe = losses.g_total + losses.d_ref + losses.d_src;
        if (!std::isfinite(probe))
            throw DivergenceError("non-finite loss at step " + std::to_string(step), step);
        res.history.push_back(losses);

        if (!checkpoint_dir.empty() && cfg.checkpoint_interval > 0 &&
            (step + 1) % cfg.checkpoint_interval == 0 && step + 1 < cfg.steps) {
            save_harmonizer(m, (fs::path(checkpoint_dir) /
                                ("harmonizer_step" + std::to_string(step + 1) + ".ckpt"))
                                   .string());
        }
    }

    if (!checkpoint_dir.empty())
        save_harmonizer(m, (fs::path(checkpoint_dir) / "harmonizer.ckpt").string());
    return res;
}

Manifest harmonize_dataset(HarmonizerModel& model, const Manifest& manifest,
                           const std::string& out_dir) {
    const int S = model.spec.image_size;
    // every row must name a site the model knows (source or reference)
    for (const auto& r : manifest.records) {
        if (!model.site_names.empty()) {
            const bool known =
                r.site_name == model.reference_name ||
                std::find(model.site_names.begin(), model.site_names.end(), r.site_name) !=
                    model.site_names.end();
            if (!known)
                throw std::runtime_error("harmonize: site '" + r.site_name +
                                         "' is not among the model's " +
                                         std::to_string(model.n_sites) + " source sites");
        } else if (r.site_index >= model.n_sites) {
            throw std::runtime_error("harmonize: site index " + std::to_string(r.site_index) +
                                     " >= K=" + std::to_string(model.n_sites));
        }
    }

    fs::create_directories(fs::path(out_dir) / "volumes");
    Manifest out;
    out.dir = out_dir;

    for (const auto& r : manifest.records) {
        Volume v = manifest.load_record(r);
        auto planes = normalize_all_slices(v, S);
        auto [z0, count] = middle_window(v.depth, model.n_slices);

        Volume hv;
        hv.width = S;
        hv.height = S;
        hv.depth = v.depth;
        hv.spacing = v.spacing;
        hv.has_spacing = v.has_spacing;
        hv.intensity_space = "model";
        hv.subject_id = r.subject_id;
        hv.voxels.resize(static_cast<size_t>(hv.size()));

        Tensorf batch({count, 1, S, S});
        const int64_t plane = static_cast<int64_t>(S) * S;
        for (int i = 0; i < count; ++i)
            std::copy_n(planes[z0 + i].ptr(), plane, batch.ptr() + i * plane);
        Generator<float>::Ctx ctx;
        Tensorf mapped = model.g.forward(batch, ctx, false);

        for (int z = 0; z < v.depth; ++z) {
            const float* src = (z >= z0 && z < z0 + count)
                                   ? mapped.ptr() + static_cast<int64_t>(z - z0) * plane
                                   : planes[z].ptr();
            std::copy_n(src, plane, hv.voxels.data() + static_cast<int64_t>(z) * plane);
        }

        const std::string rel = "volumes/" + r.subject_id + ".json";
        save_volume(hv, (fs::path(out_dir) / rel).string());
        ManifestRecord nr = r;
        nr.volume_path = rel;
        out.records.push_back(std::move(nr));
    }
    out.reindex_sites();
    out.save((fs::path(out_dir) / "manifest.csv").string());
    return out;
}

void save_harmonizer(const HarmonizerModel& model, const std::string& path) {
    json meta;
    meta["generator"] = model.spec.to_json();
    meta["discriminator"] = model.disc_spec.to_json();
    meta["n_sites"] = model.n_sites;
    meta["site_names"] = model.site_names;
    meta["reference_name"] = model.reference_name;
    meta["n_slices"] = model.n_slices;
    auto params = const_cast<HarmonizerModel&>(model).all_params();
    std::vector<const nn::Param<float>*> cp(params.begin(), params.end());
    write_checkpoint(path, "harmonizer", meta, cp);
}

HarmonizerModel load_harmonizer(const std::string& path) {
    Checkpoint c = read_checkpoint(path);
    if (c.kind != "harmonizer")
        throw std::runtime_error("checkpoint " + path + " holds a '" + c.kind +
                                 "' model, not a harmonizer");
    GeneratorSpec spec = GeneratorSpec::from_json(c.meta.at("generator"));
    DiscriminatorSpec dspec = DiscriminatorSpec::from_json(c.meta.at("discriminator"));
    const int n_sites = c.meta.at("n_sites").get<int>();
    HarmonizerModel m = HarmonizerModel::build(spec, dspec, n_sites, 0);
    m.site_names = c.meta.value("site_names", std::vector<std::string>{});
    m.reference_name = c.meta.value("reference_name", std::string{});
    m.n_slices = c.meta.value("n_slices", 8);
    c.restore(m.all_params());
    return m;
}

void write_harmonizer_history(const std::vector<HarmonizerStepLosses>& h,
                              const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write history: " + path);
    f << "step,site,d_ref,d_src,g_adv_ref,g_adv_src,cycle,g_total\n";
    f.precision(10);
    for (const auto& s : h)
        f << s.step << ',' << s.site << ',' << s.d_ref << ',' << s.d_src << ',' << s.g_adv_ref
          << ',' << s.g_adv_src << ',' << s.cycle << ',' << s.g_total << '\n';
    if (!f.flush()) throw std::runtime_error("failed writing history: " + path);
}

} // namespace canmap
