#include <doctest.h>

#include <sstream>

#include "stpconv/blocks.hpp"
#include "stpconv/train.hpp"

using namespace stpconv;

TEST_SUITE_BEGIN("train");

namespace {

ModelSpec small_spec() {
    ModelSpec spec;
    spec.num_blocks = 2;
    spec.layers_per_block = 1;
    spec.strides = {Dims3{2, 2, 2}, Dims3{2, 2, 2}};
    spec.kernel_sizes = {Dims3{3, 3, 3}};
    spec.filters = {4, 4};
    spec.alpha = 0.1;
    return spec;
}

std::vector<MaskedBlock> small_dataset(std::int64_t n, std::uint64_t seed) {
    SyntheticConfig cfg;
    cfg.n_blocks = n;
    cfg.shape = Shape4{16, 16, 8, 1};
    cfg.native_gap_fraction = 0.1;
    cfg.native_gap_correlation = 3.0;
    cfg.seed = seed;
    return generate_synthetic(cfg);
}

GapConfig small_gaps() {
    GapConfig gaps;
    gaps.correlation_length = 3.0;
    gaps.mask_fraction = 0.3;
    gaps.seed = 5;
    return gaps;
}

}  // namespace

TEST_CASE("masked mae values and gradient support") {
    Tensor4 pred(Shape4{4, 1, 1, 1}, 0.0f);
    Tensor4 target(Shape4{4, 1, 1, 1}, 0.0f);
    pred[0] = 1.0f;   // |diff| = 1
    pred[1] = -3.0f;  // |diff| = 3
    pred[2] = 9.0f;   // not in the target set
    const std::vector<std::int64_t> set{0, 1};

    const MaskedMae r = masked_mae(pred, target, set);
    CHECK(r.loss == doctest::Approx(2.0));
    CHECK(r.grad[0] == doctest::Approx(0.5f));
    CHECK(r.grad[1] == doctest::Approx(-0.5f));
    CHECK(r.grad[2] == 0.0f);
    CHECK(r.grad[3] == 0.0f);

    const MaskedMae zero = masked_mae(target, target, set);
    CHECK(zero.loss == 0.0);
    CHECK(zero.grad[0] == 0.0f);  // ties have zero subgradient

    CHECK_THROWS_AS(masked_mae(pred, target, std::vector<std::int64_t>{}), DataError);
}

TEST_CASE("learning rate schedule") {
    TrainConfig cfg;
    CHECK(lr_at_epoch(1, cfg) == doctest::Approx(0.005).epsilon(1e-12));
    CHECK(lr_at_epoch(10, cfg) == doctest::Approx(0.005).epsilon(1e-12));
    CHECK(lr_at_epoch(11, cfg) == doctest::Approx(0.0005).epsilon(1e-12));
    CHECK(lr_at_epoch(21, cfg) == doctest::Approx(0.00005).epsilon(1e-12));
    CHECK_THROWS_AS(lr_at_epoch(0, cfg), ConfigError);
}

TEST_CASE("adam first step moves by roughly the learning rate") {
    ModelSpec spec = small_spec();
    spec.num_blocks = 1;
    spec.strides = {Dims3{1, 1, 1}};
    spec.kernel_sizes = {Dims3{1, 1, 1}};
    spec.filters = {1};
    ModelState state = build_model<float>(spec, 1);
    const float before = state.encoder[0].kernels[0];

    ModelGrads grads = zero_grads_like(state);
    grads.tensors[0][0] = 1.0f;
    AdamState adam = make_adam_state(state);
    TrainConfig cfg;
    adam_step(state, grads, adam, 0.005, cfg);
    const double delta = static_cast<double>(state.encoder[0].kernels[0]) - before;
    CHECK(delta == doctest::Approx(-0.005).epsilon(1e-6));
    CHECK(adam.step == 1);

    // zero gradient with zero moments stays put
    ModelState fresh = build_model<float>(spec, 1);
    AdamState adam2 = make_adam_state(fresh);
    adam_step(fresh, zero_grads_like(fresh), adam2, 0.005, cfg);
    CHECK(fresh.encoder[0].kernels == build_model<float>(spec, 1).encoder[0].kernels);
}

TEST_CASE("adam is deterministic and a zero learning rate is a no-op") {
    ModelSpec spec = small_spec();
    ModelState a = build_model<float>(spec, 2);
    ModelState b = build_model<float>(spec, 2);
    ModelGrads grads = zero_grads_like(a);
    for (auto& tensor : grads.tensors) {
        for (std::size_t i = 0; i < tensor.size(); ++i) {
            tensor[i] = static_cast<float>(0.01 * static_cast<double>(i % 7) - 0.03);
        }
    }
    TrainConfig cfg;
    AdamState ma = make_adam_state(a), mb = make_adam_state(b);
    adam_step(a, grads, ma, 0.005, cfg);
    adam_step(b, grads, mb, 0.005, cfg);
    for (std::size_t i = 0; i < a.encoder.size(); ++i) {
        CHECK(a.encoder[i].kernels == b.encoder[i].kernels);
    }

    ModelState c = build_model<float>(spec, 2);
    const ModelState c0 = c;
    AdamState mc = make_adam_state(c);
    adam_step(c, grads, mc, 0.0, cfg);
    for (std::size_t i = 0; i < c.encoder.size(); ++i) {
        CHECK(c.encoder[i].kernels == c0.encoder[i].kernels);
        CHECK(c.encoder[i].bias == c0.encoder[i].bias);
    }
}

TEST_CASE("fit accounting on a single block") {
    const auto dataset = small_dataset(1, 11);
    const ModelSpec spec = small_spec();
    ModelState state = build_model<float>(spec, 3);
    const ModelState before = state;
    TrainConfig cfg;
    cfg.min_epochs = 1;
    cfg.batch_size = 1;
    cfg.seed = 4;
    const FitResult r = fit(dataset, spec, state, small_gaps(), cfg);
    CHECK(r.log.size() == 1);
    CHECK(r.optimizer_steps == 1);
    CHECK(r.log[0].epoch == 1);
    CHECK(r.log[0].lr == doctest::Approx(0.005));
    CHECK(state.encoder[0].kernels != before.encoder[0].kernels);
}

TEST_CASE("fit is bitwise reproducible for a fixed seed") {
    const auto dataset = small_dataset(4, 13);
    const ModelSpec spec = small_spec();
    TrainConfig cfg;
    cfg.min_epochs = 2;
    cfg.batch_size = 2;
    cfg.seed = 17;

    ModelState a = build_model<float>(spec, 5);
    ModelState b = build_model<float>(spec, 5);
    const FitResult ra = fit(dataset, spec, a, small_gaps(), cfg);
    const FitResult rb = fit(dataset, spec, b, small_gaps(), cfg);

    REQUIRE(ra.log.size() == rb.log.size());
    for (std::size_t i = 0; i < ra.log.size(); ++i) {
        CHECK(ra.log[i].train_mae == rb.log[i].train_mae);
        CHECK(ra.log[i].lr == rb.log[i].lr);
    }
    for (std::size_t i = 0; i < a.encoder.size(); ++i) {
        CHECK(a.encoder[i].kernels == b.encoder[i].kernels);
    }
    CHECK(a.projection.kernels == b.projection.kernels);
}

TEST_CASE("training reduces the loss on a learnable dataset") {
    const auto dataset = small_dataset(6, 23);
    const ModelSpec spec = small_spec();
    ModelState state = build_model<float>(spec, 7);
    TrainConfig cfg;
    cfg.min_epochs = 6;
    cfg.batch_size = 3;
    cfg.seed = 29;
    const FitResult r = fit(dataset, spec, state, small_gaps(), cfg);
    REQUIRE(r.log.size() == 6);
    CHECK(r.log.back().train_mae < r.log.front().train_mae);
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    auto dataset = small_dataset(1, 31);
    // push the data far enough that float accumulation overflows
    for (std::int64_t i = 0; i < dataset[0].data.size(); ++i) {
        if (dataset[0].mask[i] != 0.0f) dataset[0].data[i] = 3.0e38f;
    }
    const ModelSpec spec = small_spec();
    ModelState state = build_model<float>(spec, 3);
    TrainConfig cfg;
    cfg.min_epochs = 1;
    cfg.batch_size = 1;
    try {
        fit(dataset, spec, state, small_gaps(), cfg);
        FAIL("expected NumericError");
    } catch (const NumericError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("epoch 1") != std::string::npos);
        CHECK(msg.find("layer") != std::string::npos);
    }
}

TEST_CASE("empty dataset and bad config are rejected") {
    const ModelSpec spec = small_spec();
    ModelState state = build_model<float>(spec, 3);
    TrainConfig cfg;
    CHECK_THROWS_AS(fit(std::vector<MaskedBlock>{}, spec, state, small_gaps(), cfg), DataError);
    cfg.batch_size = 0;
    CHECK_THROWS_AS(fit(small_dataset(1, 1), spec, state, small_gaps(), cfg), ConfigError);
}

TEST_CASE("loss log csv format") {
    FitResult r;
    r.log.push_back(EpochLog{1, 0.005, 0.125, 2.5});
    std::ostringstream out;
    write_loss_log_csv(out, r);
    CHECK(out.str() == "epoch,lr,train_mae,wall_seconds\n1,0.005,0.125,2.5\n");
}

TEST_SUITE_END();
