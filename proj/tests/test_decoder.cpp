#include "deanet/decoder.hpp"
#include "support/ref_dea.hpp"

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

using namespace deanet;

TEST_CASE("dfb shape contract") {
    torch::manual_seed(0);
    DeepFeatureBlock dfb(8, 16);
    auto f_s = dfb->forward(torch::rand({1, 8, 16, 16}), torch::rand({1, 16, 8, 8}));
    CHECK(f_s.sizes() == torch::IntArrayRef({1, 8, 16, 16}));
}

TEST_CASE("dfb rejects a deep feature that is not at half resolution") {
    torch::manual_seed(1);
    DeepFeatureBlock dfb(8, 16);
    CHECK_THROWS_AS(dfb->forward(torch::rand({1, 8, 16, 16}), torch::rand({1, 16, 16, 16})),
                    ShapeError);
    CHECK_THROWS_AS(dfb->forward(torch::rand({1, 8, 16, 16}), torch::rand({1, 16, 4, 4})),
                    ShapeError);
}

TEST_CASE("dfb branches on zero input with zero biases") {
    torch::manual_seed(2);
    DeepFeatureBlock dfb(1, 1);
    {
        torch::NoGradGuard no_grad;
        dfb->gate_conv->bias.zero_();
        dfb->up_proj->weight.fill_(1.0); // identity for 1->1 channels
        dfb->up_proj->bias.zero_();
    }
    auto trace = dfb->forward_trace(torch::zeros({1, 1, 2, 2}), torch::zeros({1, 1, 1, 1}));
    // Branch 1 broadcast-adds sigmoid(0) = 0.5 onto the zero map.
    CHECK(torch::allclose(trace.f_m_prime, torch::full({1, 1, 2, 2}, 0.5)));
    // Branch 2: upsampled zeros stay zero, so the concat is [0.5-block, 0-block].
    CHECK(torch::allclose(trace.f_c.slice(1, 0, 1), torch::full({1, 1, 2, 2}, 0.5)));
    CHECK(trace.f_c.slice(1, 1, 2).abs().max().item<double>() == 0.0);
}

TEST_CASE("dfb branches match the hand evaluation") {
    torch::manual_seed(3);
    DeepFeatureBlock dfb(2, 2);
    auto f_m = torch::randn({1, 2, 4, 4});
    auto f_n = torch::randn({1, 2, 2, 2});
    auto expected = refdea::dfb_branches(dfb, refops::from_torch(f_m), refops::from_torch(f_n));
    auto trace = dfb->forward_trace(f_m, f_n);
    CHECK(refops::max_abs_diff(expected.f_m_prime, trace.f_m_prime) < 1e-6);
    CHECK(refops::max_abs_diff(expected.f_c, trace.f_c) < 1e-6);
}

TEST_CASE("dfb gate addend is bounded by the sigmoid range") {
    torch::manual_seed(4);
    DeepFeatureBlock dfb(4, 8);
    auto f_m = torch::randn({2, 4, 8, 8});
    auto f_n = torch::randn({2, 8, 4, 4});
    auto gate1 = dfb->forward_trace(f_m, f_n).f_m_prime - f_m;
    CHECK(gate1.min().item<double>() > 0.0);
    CHECK(gate1.max().item<double>() < 1.0);
    // Doubling f_m doubles the linear addend but the gate stays bounded.
    auto gate2 = dfb->forward_trace(2 * f_m, f_n).f_m_prime - 2 * f_m;
    CHECK(gate2.min().item<double>() > 0.0);
    CHECK(gate2.max().item<double>() < 1.0);
}

TEST_CASE("bea boundary features concatenate two half-width paths") {
    torch::manual_seed(5);
    BoundaryAttention bea(8);
    auto f_g = bea->boundary_features(torch::rand({1, 8, 12, 12}));
    CHECK(f_g.sizes() == torch::IntArrayRef({1, 8, 12, 12}));
}

TEST_CASE("bea boundary features of zeros with zero biases are zero") {
    torch::manual_seed(6);
    BoundaryAttention bea(4);
    {
        torch::NoGradGuard no_grad;
        for (auto& p : bea->named_parameters()) {
            if (p.key().find("bias") != std::string::npos) p.value().zero_();
        }
    }
    auto f_g = bea->boundary_features(torch::zeros({1, 4, 6, 6}));
    CHECK(f_g.abs().max().item<double>() == 0.0);
}

TEST_CASE("bea passthrough kernels return the impulse on both paths") {
    BoundaryAttention bea(2);
    {
        torch::NoGradGuard no_grad;
        // shared 3x3: per-channel center tap
        bea->shared_conv->weight.zero_();
        bea->shared_conv->bias.zero_();
        bea->shared_conv->weight[0][0][1][1] = 1.0;
        bea->shared_conv->weight[1][1][1][1] = 1.0;
        // each asymmetric conv passes channel 0 through its center tap
        for (auto* conv : {&bea->a_row, &bea->b_row}) {
            (*conv)->weight.zero_();
            (*conv)->bias.zero_();
            (*conv)->weight[0][0][3][0] = 1.0;
        }
        for (auto* conv : {&bea->a_col, &bea->b_col}) {
            (*conv)->weight.zero_();
            (*conv)->bias.zero_();
            (*conv)->weight[0][0][0][3] = 1.0;
        }
    }
    auto impulse = torch::zeros({1, 2, 8, 8});
    impulse[0][0][4][5] = 1.0;
    auto f_g = bea->boundary_features(impulse);
    CHECK(torch::allclose(f_g.slice(1, 0, 1), impulse.slice(1, 0, 1)));
    CHECK(torch::allclose(f_g.slice(1, 1, 2), impulse.slice(1, 0, 1)));
}

TEST_CASE("boundary map is a strict (0,1) sigmoid map") {
    torch::manual_seed(7);
    BoundaryAttention bea(4);
    SUBCASE("zero input with zero bias gives 0.5") {
        {
            torch::NoGradGuard no_grad;
            bea->map_conv->bias.zero_();
        }
        auto m_g = bea->boundary_map(torch::zeros({2, 4, 5, 5}));
        CHECK(torch::allclose(m_g, torch::full({2, 1, 5, 5}, 0.5)));
    }
    SUBCASE("any finite input stays strictly inside (0,1)") {
        auto m_g = bea->boundary_map(torch::randn({2, 4, 5, 5}) * 4);
        CHECK(m_g.min().item<double>() > 0.0);
        CHECK(m_g.max().item<double>() < 1.0);
    }
    SUBCASE("matches scalar sigmoid evaluation on a 1x2x2x2 map") {
        BoundaryAttention narrow(2);
        auto f_g = torch::randn({1, 2, 2, 2});
        auto expected = refdea::boundary_map(narrow, refops::from_torch(f_g));
        CHECK(refops::max_abs_diff(expected, narrow->boundary_map(f_g)) < 1e-6);
    }
}

TEST_CASE("adaptive threshold is a learned affine map of the mean") {
    torch::manual_seed(8);
    BoundaryAttention bea(2);
    auto set_threshold_conv = [&](double w, double b) {
        torch::NoGradGuard no_grad;
        bea->threshold_conv->weight.fill_(w);
        bea->threshold_conv->bias.fill_(b);
    };

    SUBCASE("constant map, identity conv") {
        set_threshold_conv(1.0, 0.0);
        auto delta = bea->adaptive_threshold(torch::full({1, 1, 4, 4}, 0.5));
        CHECK(delta.item<double>() == doctest::Approx(0.5).epsilon(1e-6));
    }
    SUBCASE("degenerate weight returns the bias") {
        set_threshold_conv(0.0, 0.37);
        auto delta = bea->adaptive_threshold(torch::rand({1, 1, 4, 4}));
        CHECK(delta.item<double>() == doctest::Approx(0.37).epsilon(1e-6));
    }
    SUBCASE("affine map of the mean, against a direct mean computation") {
        set_threshold_conv(2.0, -0.1);
        auto m_g = torch::rand({2, 1, 4, 4}).to(torch::kDouble);
        auto delta = bea->adaptive_threshold(m_g.to(torch::kFloat32));
        for (int b = 0; b < 2; ++b) {
            double mean = 0.0;
            for (int y = 0; y < 4; ++y) {
                for (int x = 0; x < 4; ++x) mean += m_g[b][0][y][x].item<double>();
            }
            mean /= 16.0;
            CHECK(delta[b].item<double>() == doctest::Approx(2.0 * mean - 0.1).epsilon(1e-5));
        }
    }
}

TEST_CASE("threshold comparison is exact and assigns ties to one") {
    auto m_g = torch::tensor({{0.2f, 0.8f}, {0.5f, 0.5f}}).reshape({1, 1, 2, 2});
    auto delta = torch::full({1, 1, 1, 1}, 0.5);
    auto m_t = BoundaryAttentionImpl::threshold(m_g, delta);
    auto expected = torch::tensor({{0.0f, 1.0f}, {1.0f, 1.0f}}).reshape({1, 1, 2, 2});
    CHECK(m_t.equal(expected));

    CHECK(BoundaryAttentionImpl::threshold(m_g, torch::full({1, 1, 1, 1}, 0.9))
              .abs()
              .max()
              .item<double>() == 0.0);
    CHECK(BoundaryAttentionImpl::threshold(m_g, torch::full({1, 1, 1, 1}, 0.1))
              .min()
              .item<double>() == 1.0);
}

TEST_CASE("refine map values and the sigma(1.8) spot value") {
    torch::manual_seed(9);
    BoundaryAttention bea(2);
    SUBCASE("zero weights give 0.5") {
        {
            torch::NoGradGuard no_grad;
            bea->refine_conv->weight.zero_();
            bea->refine_conv->bias.zero_();
        }
        auto m_b = bea->refine(torch::rand({1, 1, 3, 3}), torch::rand({1, 1, 3, 3}));
        CHECK(torch::allclose(m_b, torch::full({1, 1, 3, 3}, 0.5)));
    }
    SUBCASE("unit weights on (1, 0.8) give sigmoid(1.8)") {
        {
            torch::NoGradGuard no_grad;
            bea->refine_conv->weight.fill_(1.0);
            bea->refine_conv->bias.zero_();
        }
        auto m_b = bea->refine(torch::ones({1, 1, 2, 2}), torch::full({1, 1, 2, 2}, 0.8));
        CHECK(m_b.mean().item<double>() == doctest::Approx(0.85814893509).epsilon(1e-6));
    }
    SUBCASE("shape contract") {
        auto m_b = bea->refine(torch::rand({1, 1, 52, 52}), torch::rand({1, 1, 52, 52}));
        CHECK(m_b.sizes() == torch::IntArrayRef({1, 1, 52, 52}));
    }
}

TEST_CASE("bea forward composes the equations") {
    torch::manual_seed(10);
    BoundaryAttention bea(2);

    SUBCASE("zero features reduce to the enhancement bias plus residual") {
        auto out = bea->forward(torch::zeros({1, 2, 4, 4}));
        auto bias = bea->enhance_conv->bias.reshape({1, 2, 1, 1}).expand({1, 2, 4, 4});
        CHECK(torch::allclose(out.f_s_prime.data, bias));
    }
    SUBCASE("identity enhancement kernel recovers F_s*(M_g+M_t) + F_s") {
        {
            torch::NoGradGuard no_grad;
            bea->enhance_conv->weight.zero_();
            bea->enhance_conv->bias.zero_();
            bea->enhance_conv->weight[0][0][1][1] = 1.0;
            bea->enhance_conv->weight[1][1][1][1] = 1.0;
        }
        auto f_s = torch::randn({1, 2, 2, 2});
        auto out = bea->forward(f_s);
        auto expected = f_s * (out.m_g.data + out.m_t.data) + f_s;
        CHECK(torch::allclose(out.f_s_prime.data, expected, 1e-6, 1e-6));
    }
    SUBCASE("zero enhancement weights leave the residual plus bias") {
        {
            torch::NoGradGuard no_grad;
            bea->enhance_conv->weight.zero_();
            bea->enhance_conv->bias.fill_(0.25);
        }
        auto f_s = torch::randn({1, 2, 3, 3});
        auto out = bea->forward(f_s);
        CHECK(torch::allclose(out.f_s_prime.data, f_s + 0.25));
    }
    SUBCASE("matches the full hand evaluation on a 1x2x4x4 tensor") {
        auto f_s = torch::randn({1, 2, 4, 4});
        auto expected = refdea::bea_forward(bea, refops::from_torch(f_s));
        auto out = bea->forward(f_s);
        CHECK(refops::max_abs_diff(expected.m_g, out.m_g.data) < 1e-6);
        CHECK(refops::max_abs_diff(expected.m_t, out.m_t.data) < 1e-6);
        CHECK(refops::max_abs_diff(expected.m_b, out.m_b.data) < 1e-6);
        CHECK(refops::max_abs_diff(expected.f_s_prime, out.f_s_prime.data) < 1e-6);
    }
}

TEST_CASE("bea invariants hold on random batches") {
    torch::manual_seed(11);
    BoundaryAttention bea(4);
    for (int trial = 0; trial < 10; ++trial) {
        auto out = bea->forward(torch::randn({2, 4, 6, 6}) * 3);
        auto m_t = out.m_t.data;
        CHECK(((m_t == 0) | (m_t == 1)).all().item<bool>());
        CHECK(out.m_g.data.min().item<double>() > 0.0);
        CHECK(out.m_g.data.max().item<double>() < 1.0);
        CHECK(out.m_b.data.min().item<double>() > 0.0);
        CHECK(out.m_b.data.max().item<double>() < 1.0);
        // threshold consistency, per sample
        auto consistent = (m_t == 1) == (out.m_g.data >= out.delta.value);
        CHECK(consistent.all().item<bool>());
        CHECK(all_finite(out.f_s_prime.data));
    }
}

TEST_CASE("enhanced output minus the residual is exactly the convolved term") {
    torch::manual_seed(12);
    BoundaryAttention bea(4);
    auto f_s = torch::randn({2, 4, 6, 6});
    auto out = bea->forward(f_s);
    auto enhancement =
        bea->enhance_conv->forward(f_s * out.m_g.data + f_s * out.m_t.data);
    CHECK(out.f_s_prime.data.equal(enhancement + f_s));
}
