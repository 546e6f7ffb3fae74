#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>

#include "advlora/errors.hpp"
#include "advlora/model.hpp"
#include "advlora/rng.hpp"

using namespace advlora;

namespace {

ModelConfig small_config(std::uint64_t seed) {
    ModelConfig cfg;
    cfg.input_dim = 4;
    cfg.layer_dims = {5, 4};
    cfg.num_classes = 3;
    cfg.rank = 2;
    cfg.dropout_p = 0.0;
    cfg.temperature = 0.7;
    cfg.backbone_seed = seed;
    cfg.adapter_seed = seed + 1;
    return cfg;
}

void randomize_adapters(AdapterModel& model, std::uint64_t seed) {
    std::uint64_t idx = 0;
    for (LoRALinear& layer : model.layers) {
        for (AdapterUnit* unit : {&layer.q, layer.v ? &layer.v.value() : nullptr}) {
            if (!unit) continue;
            for (std::size_t i = 0; i < unit->a.size(); ++i)
                unit->a.data()[i] = 0.3 * gaussian(seed, idx++);
            for (std::size_t i = 0; i < unit->b.size(); ++i)
                unit->b.data()[i] = 0.3 * gaussian(seed, idx++);
        }
    }
}

Batch random_batch(const AdapterModel& model, std::size_t m, std::uint64_t seed) {
    Batch batch;
    batch.inputs = Matrix::gaussian(m, model.input_dim, 1.0, seed);
    for (std::size_t i = 0; i < m; ++i)
        batch.labels.push_back(uniform_below(seed, 1000 + i, model.num_classes()));
    for (std::size_t i = 0; i < m; ++i) batch.sample_ids.push_back(i);
    return batch;
}

double loss_at(const AdapterModel& model, const Batch& batch,
               const std::vector<double>* delta) {
    PassOptions opts;
    return loss_ce(forward(model, batch.inputs, delta, opts).probs, batch.labels);
}

// Central finite differences over one parameter matrix.
Matrix fd_matrix(AdapterModel& model, const Batch& batch,
                 const std::vector<double>* delta, Matrix& param, double h) {
    Matrix fd(param.rows(), param.cols());
    for (std::size_t i = 0; i < param.size(); ++i) {
        const double saved = param.data()[i];
        param.data()[i] = saved + h;
        const double lp = loss_at(model, batch, delta);
        param.data()[i] = saved - h;
        const double lm = loss_at(model, batch, delta);
        param.data()[i] = saved;
        fd.data()[i] = (lp - lm) / (2.0 * h);
    }
    return fd;
}

double block_rel_error(const Matrix& analytic, const Matrix& fd) {
    Matrix diff = fd;
    diff -= analytic;
    const double denom =
        std::max({frobenius_norm(analytic), frobenius_norm(fd), 1e-8});
    return frobenius_norm(diff) / denom;
}

} // namespace

TEST_CASE("effective weight: zero B reproduces w0 exactly, linear in scale") {
    AdapterModel model = make_model(small_config(5));
    const AdapterUnit& unit = model.layers[0].q;
    CHECK(effective_weight(unit) == unit.w0);

    AdapterModel m2 = model;
    randomize_adapters(m2, 77);
    AdapterUnit u1 = m2.layers[0].q;
    AdapterUnit u2 = u1;
    u2.scale = 2.0 * u1.scale;
    Matrix c1 = effective_weight(u1);
    c1 -= u1.w0;
    Matrix c2 = effective_weight(u2);
    c2 -= u2.w0;
    c1 *= 2.0;
    c1 -= c2;
    CHECK(frobenius_norm(c1) <= 1e-13);  // exact up to the add/sub roundings

    // brute-force triple-loop oracle for w0 + s * b * a
    Matrix expect = u1.w0;
    for (std::size_t i = 0; i < u1.b.rows(); ++i)
        for (std::size_t j = 0; j < u1.a.cols(); ++j) {
            double s = 0.0;
            for (std::size_t p = 0; p < u1.rank; ++p) s += u1.b(i, p) * u1.a(p, j);
            expect(i, j) += u1.scale * s;
        }
    Matrix got = effective_weight(u1);
    got -= expect;
    CHECK(frobenius_norm(got) <= 1e-12);
}

TEST_CASE("forward: matching embedding wins, symmetric embeddings tie") {
    // one identity-activation layer wired to emit class 3's embedding
    ModelConfig cfg;
    cfg.input_dim = 2;
    cfg.layer_dims = {6};
    cfg.num_classes = 5;
    cfg.rank = 1;
    cfg.dropout_p = 0.0;
    cfg.temperature = 0.5;
    cfg.backbone_seed = 9;
    cfg.adapter_seed = 10;
    AdapterModel model = make_model(cfg);
    for (std::size_t j = 0; j < 6; ++j) {
        model.layers[0].q.w0(j, 0) = model.class_embeddings(3, j);
        model.layers[0].q.w0(j, 1) = 0.0;
    }
    Matrix x(1, 2, 0.0);
    x(0, 0) = 1.0;
    PassOptions opts;
    const Matrix probs = forward(model, x, nullptr, opts).probs;
    std::size_t arg = 0;
    for (std::size_t j = 1; j < 5; ++j)
        if (probs(0, j) > probs(0, arg)) arg = j;
    CHECK(arg == 3);
    CHECK(probs(0, 3) > 1.0 / 5.0);

    // orthonormal class embeddings seen from the diagonal: uniform row
    ModelConfig sym = cfg;
    sym.input_dim = 4;
    sym.layer_dims = {4};
    sym.num_classes = 4;
    AdapterModel msym = make_model(sym);
    msym.class_embeddings = Matrix(4, 4, 0.0);
    for (std::size_t k = 0; k < 4; ++k) msym.class_embeddings(k, k) = 1.0;
    for (std::size_t j = 0; j < 4; ++j)
        for (std::size_t i = 0; i < 4; ++i)
            msym.layers[0].q.w0(j, i) = i == 0 ? 1.0 : 0.0;
    Matrix xs(1, 4, 0.0);
    xs(0, 0) = 1.0;  // embedding = (1,1,1,1)
    const Matrix ps = forward(msym, xs, nullptr, opts).probs;
    for (std::size_t k = 0; k < 4; ++k)
        CHECK(ps(0, k) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("forward: probabilities are valid distributions") {
    AdapterModel model = make_model(small_config(21));
    randomize_adapters(model, 22);
    Batch batch = random_batch(model, 7, 23);
    PassOptions opts;
    const Matrix probs = forward(model, batch.inputs, nullptr, opts).probs;
    for (std::size_t i = 0; i < probs.rows(); ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < probs.cols(); ++j) {
            CHECK(probs(i, j) >= 0.0);
            sum += probs(i, j);
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-9));
    }
}

TEST_CASE("forward: cosine head ignores embedding scale") {
    ModelConfig cfg = small_config(31);
    AdapterModel model = make_model(cfg);
    randomize_adapters(model, 32);
    AdapterModel scaled = model;
    scaled.layers.back().q.w0 *= 7.3;
    scaled.layers.back().q.a *= 7.3;
    scaled.layers.back().q.b *= 1.0;  // scaling a alone scales the whole product

    Matrix x = Matrix::gaussian(3, cfg.input_dim, 1.0, 33);
    PassOptions opts;
    const Matrix p1 = forward(model, x, nullptr, opts).probs;
    const Matrix p2 = forward(scaled, x, nullptr, opts).probs;
    for (std::size_t i = 0; i < p1.size(); ++i)
        CHECK(std::abs(p1.data()[i] - p2.data()[i]) <= 1e-12);
}

TEST_CASE("forward rejects bad input") {
    AdapterModel model = make_model(small_config(41));
    Matrix x(1, 4, 0.0);
    x(0, 2) = std::numeric_limits<double>::quiet_NaN();
    PassOptions opts;
    CHECK_THROWS_AS(forward(model, x, nullptr, opts), NumericalError);
}

TEST_CASE("loss_ce fixtures") {
    Matrix perfect(1, 3, 0.0);
    perfect(0, 1) = 1.0;
    CHECK(loss_ce(perfect, {1}) == doctest::Approx(0.0).epsilon(1e-15));

    Matrix uniform(1, 10, 0.1);
    CHECK(loss_ce(uniform, {4}) == doctest::Approx(std::log(10.0)).epsilon(1e-12));

    Matrix two(2, 4, 0.0);
    two(0, 0) = 0.7;
    two(0, 1) = 0.1;
    two(0, 2) = 0.1;
    two(0, 3) = 0.1;
    two(1, 0) = 0.25;
    two(1, 1) = 0.25;
    two(1, 2) = 0.25;
    two(1, 3) = 0.25;
    const double l1 = loss_ce(Matrix(two), {0, 2}) * 2.0;
    Matrix first(1, 4, 0.0), second(1, 4, 0.0);
    for (int j = 0; j < 4; ++j) {
        first(0, j) = two(0, j);
        second(0, j) = two(1, j);
    }
    const double split = loss_ce(first, {0}) + loss_ce(second, {2});
    CHECK(l1 == doctest::Approx(split).epsilon(1e-12));
}

TEST_CASE("zero-adapter model matches disabled adapters bit for bit") {
    ModelConfig cfg = small_config(51);
    AdapterModel with_zero_b = make_model(cfg);  // fresh: B = 0
    AdapterModel disabled = with_zero_b;
    for (LoRALinear& layer : disabled.layers) layer.q.enabled = false;

    Matrix x = Matrix::gaussian(4, cfg.input_dim, 1.0, 52);
    PassOptions opts;
    const Matrix p1 = forward(with_zero_b, x, nullptr, opts).probs;
    const Matrix p2 = forward(disabled, x, nullptr, opts).probs;
    CHECK(p1 == p2);
}

TEST_CASE("backward: zero B forces zero grad_a") {
    AdapterModel model = make_model(small_config(61));
    Batch batch = random_batch(model, 3, 62);
    PassOptions opts;
    BackwardResult res = backward(model, batch, nullptr, opts);
    for (const UnitGrads& g : res.bundle.units)
        CHECK(frobenius_norm(g.grad_a) == 0.0);
}

TEST_CASE("backward matches central finite differences on 100 random configs") {
    int checked = 0;
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        const std::uint64_t s = 1000 + trial * 13;
        ModelConfig cfg;
        cfg.input_dim = 2 + uniform_below(s, 0, 7);
        const std::size_t layers = 2 + uniform_below(s, 1, 2);
        for (std::size_t l = 0; l < layers; ++l)
            cfg.layer_dims.push_back(2 + uniform_below(s, 2 + l, 7));
        cfg.num_classes = 2 + uniform_below(s, 9, 7);
        std::size_t min_dim = cfg.input_dim;
        for (std::size_t d : cfg.layer_dims) min_dim = std::min(min_dim, d);
        cfg.rank = 1 + uniform_below(s, 10, std::min<std::uint64_t>(2, min_dim));
        cfg.dropout_p = 0.0;
        cfg.temperature = 0.3 + uniform01(s, 11);
        cfg.scale = trial % 3 == 0 ? 0.5 : 1.0;
        cfg.qv_mode = trial % 5 == 0;
        cfg.backbone_seed = s + 1;
        cfg.adapter_seed = s + 2;

        AdapterModel model = make_model(cfg);
        randomize_adapters(model, s + 3);
        Batch batch = random_batch(model, 1 + uniform_below(s, 12, 4), s + 4);

        std::vector<double> delta(cfg.input_dim, 0.0);
        if (trial % 2 == 0)
            for (std::size_t j = 0; j < delta.size(); ++j)
                delta[j] = 0.05 * gaussian(s + 5, j);
        const std::vector<double>* dptr = &delta;

        PassOptions opts;
        BackwardResult res = backward(model, batch, dptr, opts);
        const double h = 1e-5;

        for (const UnitGrads& g : res.bundle.units) {
            LoRALinear& layer = model.layers[g.layer];
            AdapterUnit& unit = g.unit == 0 ? layer.q : *layer.v;
            const Matrix fd_a = fd_matrix(model, batch, dptr, unit.a, h);
            const Matrix fd_b = fd_matrix(model, batch, dptr, unit.b, h);
            CHECK(block_rel_error(g.grad_a, fd_a) <= 1e-5);
            CHECK(block_rel_error(g.grad_b, fd_b) <= 1e-5);
        }

        // grad_delta block against its own probe
        Matrix fd_delta(1, cfg.input_dim);
        for (std::size_t j = 0; j < cfg.input_dim; ++j) {
            const double saved = delta[j];
            delta[j] = saved + h;
            const double lp = loss_at(model, batch, dptr);
            delta[j] = saved - h;
            const double lm = loss_at(model, batch, dptr);
            delta[j] = saved;
            fd_delta(0, j) = (lp - lm) / (2.0 * h);
        }
        Matrix gd(1, cfg.input_dim);
        for (std::size_t j = 0; j < cfg.input_dim; ++j)
            gd(0, j) = res.bundle.grad_delta[j];
        CHECK(block_rel_error(gd, fd_delta) <= 1e-5);
        ++checked;
    }
    CHECK(checked == 100);
}

TEST_CASE("chain-rule identity holds to 1e-10") {
    for (std::uint64_t trial = 0; trial < 100; ++trial) {
        ModelConfig cfg = small_config(7000 + trial);
        cfg.qv_mode = trial % 4 == 0;
        AdapterModel model = make_model(cfg);
        randomize_adapters(model, 7100 + trial);
        Batch batch = random_batch(model, 3, 7200 + trial);
        CHECK(chain_rule_residual(model, batch, nullptr) <= 1e-10);
    }

    // b = 0: residual collapses along with grad_a
    AdapterModel fresh = make_model(small_config(7777));
    Batch batch = random_batch(fresh, 2, 7778);
    CHECK(chain_rule_residual(fresh, batch, nullptr) <= 1e-12);
}

TEST_CASE("dropout masks replay by (seed, step) and vanish in eval mode") {
    ModelConfig cfg = small_config(81);
    cfg.dropout_p = 0.25;
    AdapterModel model = make_model(cfg);
    randomize_adapters(model, 82);
    Batch batch = random_batch(model, 4, 83);

    PassOptions t1{true, 42, 3};
    PassOptions t2{true, 42, 3};
    PassOptions t3{true, 42, 4};
    const Matrix p1 = forward(model, batch.inputs, nullptr, t1).probs;
    const Matrix p2 = forward(model, batch.inputs, nullptr, t2).probs;
    const Matrix p3 = forward(model, batch.inputs, nullptr, t3).probs;
    CHECK(p1 == p2);
    CHECK_FALSE(p1 == p3);

    AdapterModel no_dropout = model;
    for (LoRALinear& layer : no_dropout.layers) layer.dropout_p = 0.0;
    PassOptions eval_opts{false, 42, 3};
    const Matrix pe = forward(model, batch.inputs, nullptr, eval_opts).probs;
    PassOptions train_nodrop{true, 42, 3};
    const Matrix pn = forward(no_dropout, batch.inputs, nullptr, train_nodrop).probs;
    CHECK(pe == pn);
}

TEST_CASE("placement bands and q/v targets") {
    ModelConfig cfg = small_config(91);
    cfg.layer_dims = {5, 5, 5, 4};
    AdapterModel model = make_model(cfg);

    apply_placement(model, {LayerBand::all, {}, MatrixTarget::all});
    for (const LoRALinear& layer : model.layers) CHECK(layer.q.enabled);

    apply_placement(model, {LayerBand::bottom, {}, MatrixTarget::all});
    CHECK(model.layers[0].q.enabled);
    CHECK(model.layers[1].q.enabled);
    CHECK_FALSE(model.layers[2].q.enabled);
    CHECK_FALSE(model.layers[3].q.enabled);

    apply_placement(model, {LayerBand::up, {}, MatrixTarget::all});
    CHECK_FALSE(model.layers[0].q.enabled);
    CHECK_FALSE(model.layers[1].q.enabled);
    CHECK(model.layers[2].q.enabled);
    CHECK(model.layers[3].q.enabled);

    apply_placement(model, {LayerBand::mid, {}, MatrixTarget::all});
    CHECK_FALSE(model.layers[0].q.enabled);
    CHECK(model.layers[1].q.enabled);
    CHECK(model.layers[2].q.enabled);
    CHECK_FALSE(model.layers[3].q.enabled);

    apply_placement(model, {LayerBand::explicit_list, {1, 3}, MatrixTarget::all});
    CHECK_FALSE(model.layers[0].q.enabled);
    CHECK(model.layers[1].q.enabled);
    CHECK(model.layers[3].q.enabled);

    CHECK_THROWS_AS(
        apply_placement(model, {LayerBand::explicit_list, {}, MatrixTarget::all}),
        ConfigError);
    // v-only placement is impossible without the q/v pair
    CHECK_THROWS_AS(
        apply_placement(model, {LayerBand::all, {}, MatrixTarget::v_only}),
        ConfigError);

    // disabled layers contribute no grads
    apply_placement(model, {LayerBand::explicit_list, {1}, MatrixTarget::all});
    randomize_adapters(model, 92);
    Batch batch = random_batch(model, 2, 93);
    PassOptions opts;
    BackwardResult res = backward(model, batch, nullptr, opts);
    CHECK(res.bundle.units.size() == 1);
    CHECK(res.bundle.units[0].layer == 1);

    ModelConfig qv = small_config(94);
    qv.qv_mode = true;
    AdapterModel mqv = make_model(qv);
    apply_placement(mqv, {LayerBand::all, {}, MatrixTarget::v_only});
    CHECK_FALSE(mqv.layers[0].q.enabled);
    CHECK(mqv.layers[0].v->enabled);
}

TEST_CASE("checkpoint round-trips bit-exactly") {
    ModelConfig cfg = small_config(101);
    cfg.qv_mode = true;
    cfg.dropout_p = 0.25;
    AdapterModel model = make_model(cfg);
    randomize_adapters(model, 102);
    apply_placement(model, {LayerBand::half_bottom, {}, MatrixTarget::qv});

    for (bool store_frozen : {false, true}) {
        const std::string path =
            (std::filesystem::temp_directory_path() / "advlora_ckpt.json").string();
        save_checkpoint(model, path, store_frozen);
        AdapterModel loaded = load_checkpoint(path);
        std::remove(path.c_str());

        CHECK(loaded.class_embeddings == model.class_embeddings);
        CHECK(loaded.temperature == model.temperature);
        REQUIRE(loaded.layers.size() == model.layers.size());
        for (std::size_t l = 0; l < model.layers.size(); ++l) {
            CHECK(loaded.layers[l].q.w0 == model.layers[l].q.w0);
            CHECK(loaded.layers[l].q.a == model.layers[l].q.a);
            CHECK(loaded.layers[l].q.b == model.layers[l].q.b);
            CHECK(loaded.layers[l].q.enabled == model.layers[l].q.enabled);
            REQUIRE(loaded.layers[l].v.has_value());
            CHECK(loaded.layers[l].v->a == model.layers[l].v->a);
            CHECK(loaded.layers[l].v->b == model.layers[l].v->b);
            CHECK(loaded.layers[l].v->enabled == model.layers[l].v->enabled);
        }

        // identical behaviour after reload
        Batch batch = random_batch(model, 3, 103);
        PassOptions opts;
        CHECK(forward(loaded, batch.inputs, nullptr, opts).probs ==
              forward(model, batch.inputs, nullptr, opts).probs);
    }
}
