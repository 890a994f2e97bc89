#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "textmux/gradcheck.hpp"
#include "textmux/recheads.hpp"

using namespace textmux;

namespace {

CharsetTable small_table() {
    return CharsetTable(ScriptId::Latin, {'a', 'b', 'c', 'd'});
}

HeadConfig tiny_arch(const CharsetTable& table) {
    HeadConfig c;
    c.script = table.script();
    c.charset_size = table.size();
    c.embed_size = 5;
    c.hidden_size = 7;
    c.feature_channels = 4;
    c.pooled_size = 4;
    c.t_max = 8;
    return c;
}

RecognitionHead<double> make_head(ParameterSet<double>& params, Rng& rng,
                                  const std::string& name = "head/test") {
    RecognitionHead<double> head;
    head.table = small_table();
    head.config = tiny_arch(head.table);
    head.init(params, rng, name);
    return head;
}

Tensor<double> random_feature(Rng& rng, int c = 4, int s = 4) {
    std::vector<double> v(static_cast<std::size_t>(c) * s * s);
    for (auto& x : v) x = rng.uniform(-1.0, 1.0);
    return Tensor<double>::constant({c, s, s}, v, "pooled");
}

// Log-probability rows with a chosen probability at each target index; the
// remaining mass is spread over the other entries.
CharProbSequence<double> rigged_rows(const std::vector<int>& targets, const std::vector<double>& p,
                                     int width) {
    CharProbSequence<double> seq;
    for (std::size_t t = 0; t < targets.size(); ++t) {
        std::vector<double> row(static_cast<std::size_t>(width));
        double rest = (1.0 - p[t]) / (width - 1);
        for (auto& v : row) v = std::log(std::max(rest, 1e-300));
        row[static_cast<std::size_t>(targets[t])] = std::log(p[t]);
        seq.log_probs.push_back(Tensor<double>::constant({width}, row));
    }
    return seq;
}

}  // namespace

TEST_CASE("probability rows sum to one at every step") {
    Rng rng(3);
    ParameterSet<double> params;
    auto head = make_head(params, rng);
    auto teacher = head.table.encode_word("abca", head.config.t_max);
    auto probs = head.forward(random_feature(rng), teacher);
    for (const auto& row : probs.probability_rows()) {
        double total = 0;
        for (double v : row) {
            REQUIRE(v > 0.0);
            total += v;
        }
        REQUIRE(total == Catch::Approx(1.0).margin(1e-6));
    }
}

TEST_CASE("teacher length five gives exactly five rows") {
    Rng rng(5);
    ParameterSet<double> params;
    auto head = make_head(params, rng);
    auto teacher = head.table.encode_word("abcd", head.config.t_max);  // 4 chars + EOS
    REQUIRE(teacher.length() == 5);
    auto probs = head.forward(random_feature(rng), teacher);
    REQUIRE(probs.steps() == 5);
    REQUIRE(probs.log_probs[0].size() == static_cast<std::size_t>(head.table.size() + 1));
}

TEST_CASE("head parameter count equals the documented formula") {
    Rng rng(7);
    ParameterSet<double> params;
    auto head = make_head(params, rng);
    REQUIRE(params.element_count() == static_cast<std::size_t>(count_head_parameters(head.config)));
}

TEST_CASE("greedy decode") {
    SECTION("a head rigged to emit EOS immediately returns the empty transcription") {
        Rng rng(9);
        ParameterSet<double> params;
        auto head = make_head(params, rng);
        for (auto& v : params.at("head/test/out_w").tensor.values()) v = 0.0;
        auto& bias = params.at("head/test/out_b").tensor.values();
        for (auto& v : bias) v = 0.0;
        bias[static_cast<std::size_t>(head.table.eos_index())] = 10.0;
        auto res = head.decode_greedy(random_feature(rng));
        REQUIRE(res.transcription.empty());
        REQUIRE(res.indices.empty());
    }
    SECTION("decoding is deterministic") {
        Rng rng(11);
        ParameterSet<double> params;
        auto head = make_head(params, rng);
        auto feature = random_feature(rng);
        auto a = head.decode_greedy(feature);
        auto b = head.decode_greedy(feature);
        REQUIRE(a.transcription == b.transcription);
        REQUIRE(a.indices == b.indices);
        REQUIRE(a.score == b.score);
    }
    SECTION("decode stops at t_max without EOS") {
        Rng rng(13);
        ParameterSet<double> params;
        auto head = make_head(params, rng);
        for (auto& v : params.at("head/test/out_w").tensor.values()) v = 0.0;
        auto& bias = params.at("head/test/out_b").tensor.values();
        for (auto& v : bias) v = 0.0;
        bias[0] = 10.0;  // always emit 'a'
        auto res = head.decode_greedy(random_feature(rng));
        REQUIRE(static_cast<int>(res.indices.size()) == head.config.t_max);
        REQUIRE(res.transcription == std::string(8, 'a'));
    }
}

TEST_CASE("sequence loss closed forms") {
    CharsetTable table = small_table();
    const int width = table.size() + 1;

    SECTION("probabilities (0.5, 0.25, 1.0) average to ln 2") {
        auto target = table.encode_word("ab", 32);
        auto probs = rigged_rows({0, 1, table.eos_index()}, {0.5, 0.25, 1.0}, width);
        REQUIRE(sequence_loss(probs, target).item() ==
                Catch::Approx((std::log(2.0) + std::log(4.0)) / 3.0).epsilon(1e-6));
    }
    SECTION("perfect prediction costs zero") {
        auto target = table.encode_word("ab", 32);
        auto probs = rigged_rows({0, 1, table.eos_index()}, {1.0, 1.0, 1.0}, width);
        REQUIRE(sequence_loss(probs, target).item() == Catch::Approx(0.0).margin(1e-9));
    }
    SECTION("random case equals an independent recomputation") {
        Rng rng(17);
        for (int trial = 0; trial < 10; ++trial) {
            int len = rng.range_int(1, 4);
            std::string word;
            for (int i = 0; i < len; ++i) word.push_back("abcd"[rng.below(4)]);
            auto target = table.encode_word(word, 32);
            std::vector<int> idx(target.indices.begin(), target.indices.end());
            std::vector<double> p;
            for (int t = 0; t < target.length(); ++t) p.push_back(rng.uniform(0.05, 0.95));
            auto probs = rigged_rows(idx, p, width);
            double expect = 0;
            for (double v : p) expect -= std::log(v);
            expect /= target.length();
            REQUIRE(sequence_loss(probs, target).item() == Catch::Approx(expect).epsilon(1e-6));
        }
    }
    SECTION("unsupported positions are rejected by the plain form") {
        auto target = table.encode_word("a€b", 32);
        auto probs = rigged_rows({0, 0, 1, table.eos_index()}, {0.5, 0.5, 0.5, 0.5}, width);
        REQUIRE_THROWS_AS(sequence_loss(probs, target), std::invalid_argument);
    }
}

TEST_CASE("masked and penalized loss closed forms") {
    CharsetTable table = small_table();
    const int width = table.size() + 1;
    // target a, <euro>, b, EOS with the euro unsupported
    auto target = table.encode_word("a€b", 32);
    REQUIRE(target.supported == std::vector<bool>{true, false, true, true});
    std::vector<int> rows_idx = {0, 0, 1, table.eos_index()};  // masked row index is arbitrary

    SECTION("masked: (ln2 + 0 + ln4 + 0)/4") {
        auto probs = rigged_rows(rows_idx, {0.5, 0.123, 0.25, 1.0}, width);
        REQUIRE(masked_sequence_loss(probs, target).item() ==
                Catch::Approx((std::log(2.0) + std::log(4.0)) / 4.0).epsilon(1e-6));
    }
    SECTION("penalized with beta=-12 adds 12/4") {
        auto probs = rigged_rows(rows_idx, {0.5, 0.123, 0.25, 1.0}, width);
        REQUIRE(penalized_sequence_loss(probs, target, -12.0).item() ==
                Catch::Approx((std::log(2.0) + 12.0 + std::log(4.0)) / 4.0).epsilon(1e-6));
        REQUIRE(penalized_sequence_loss(probs, target, -12.0).item() ==
                Catch::Approx(3.519860).margin(1e-4));
    }
    SECTION("beta >= 0 is rejected") {
        auto probs = rigged_rows(rows_idx, {0.5, 0.5, 0.5, 0.5}, width);
        REQUIRE_THROWS_AS(penalized_sequence_loss(probs, target, 0.0), std::invalid_argument);
        REQUIRE_THROWS_AS(penalized_sequence_loss(probs, target, 1.0), std::invalid_argument);
    }
    SECTION("two unsupported of three positions: (12+12+0)/3") {
        auto t2 = table.encode_word("€€", 32);
        auto probs = rigged_rows({0, 0, table.eos_index()}, {0.3, 0.3, 1.0}, width);
        REQUIRE(penalized_sequence_loss(probs, t2, -12.0).item() == Catch::Approx(8.0).epsilon(1e-9));
    }
    SECTION("hypothetical all-unsupported word costs exactly -beta") {
        TokenSequence t2;
        t2.indices = {5, 5, 5};
        t2.supported = {false, false, false};
        auto probs = rigged_rows({0, 0, 0}, {0.3, 0.3, 0.3}, width);
        REQUIRE(masked_sequence_loss(probs, t2).item() == 0.0);
        REQUIRE(penalized_sequence_loss(probs, t2, -12.0).item() == 12.0);
    }
    SECTION("identity: penalized - masked = (-beta) * unsupported / T_w exactly") {
        Rng rng(21);
        for (int trial = 0; trial < 20; ++trial) {
            int len = rng.range_int(1, 6);
            TokenSequence t2;
            for (int i = 0; i < len; ++i) {
                bool sup = rng.bernoulli(0.6);
                t2.indices.push_back(sup ? static_cast<int>(rng.below(4)) : table.pad_index());
                t2.supported.push_back(sup);
            }
            t2.indices.push_back(table.eos_index());
            t2.supported.push_back(true);
            std::vector<int> idx;
            std::vector<double> p;
            for (int i = 0; i < t2.length(); ++i) {
                idx.push_back(t2.supported[static_cast<std::size_t>(i)]
                                  ? t2.indices[static_cast<std::size_t>(i)]
                                  : 0);
                p.push_back(rng.uniform(0.05, 0.95));
            }
            auto probs = rigged_rows(idx, p, width);
            double beta = -12.0;
            double masked = masked_sequence_loss(probs, t2).item();
            double penal = penalized_sequence_loss(probs, t2, beta).item();
            double expected_gap = (-beta) * (static_cast<double>(count_unsupported(t2)) / t2.length());
            REQUIRE(penal == masked + expected_gap);  // exact by construction
        }
    }
    SECTION("masked variants reduce to the plain loss when all supported") {
        auto t2 = table.encode_word("dcba", 32);
        std::vector<int> idx(t2.indices.begin(), t2.indices.end());
        auto probs = rigged_rows(idx, {0.7, 0.2, 0.5, 0.9, 0.8}, width);
        double plain = sequence_loss(probs, t2).item();
        REQUIRE(masked_sequence_loss(probs, t2).item() == plain);
        REQUIRE(penalized_sequence_loss(probs, t2, -12.0).item() == plain);
    }
}

TEST_CASE("masked loss is invariant to probabilities at unsupported positions") {
    Rng rng(23);
    ParameterSet<double> params;
    auto head = make_head(params, rng);
    auto feature = random_feature(rng);
    auto target = head.table.encode_word("a€b", head.config.t_max);

    params.zero_grad();
    auto loss1 = masked_sequence_loss(head.forward(feature, target), target);
    forward_backward(loss1);
    auto grads1 = params.at("head/test/out_w").tensor.grad();
    double v1 = loss1.item();

    // perturbing the model cannot change what the masked position contributes:
    // rebuild with a biased output row at the masked step via a rigged teacher
    // (the masked step's probability row depends on upstream state only, so
    // instead we check the gradient w.r.t. a direct perturbation of that row)
    auto probs = head.forward(feature, target);
    auto perturbed = probs;
    auto bump = Tensor<double>::constant({head.table.size() + 1},
                                         std::vector<double>(static_cast<std::size_t>(head.table.size() + 1), 0.37));
    perturbed.log_probs[1] = add(probs.log_probs[1], bump);
    REQUIRE(masked_sequence_loss(perturbed, target).item() == v1);

    params.zero_grad();
    auto loss2 = masked_sequence_loss(perturbed, target);
    forward_backward(loss2);
    REQUIRE(params.at("head/test/out_w").tensor.grad() == grads1);
}

TEST_CASE("sequence loss gradients pass finite differences through the head") {
    Rng rng(29);
    ParameterSet<double> params;
    auto head = make_head(params, rng);
    auto feature = random_feature(rng);

    SECTION("plain (Eq. 3)") {
        auto target = head.table.encode_word("abc", head.config.t_max);
        auto build = [&]() { return sequence_loss(head.forward(feature, target), target); };
        REQUIRE(grad_check<double>(build, params, 1e-5).max_rel_error < 1e-5);
    }
    SECTION("masked (Eq. 4) with mixed support") {
        auto target = head.table.encode_word("a€b", head.config.t_max);
        auto build = [&]() { return masked_sequence_loss(head.forward(feature, target), target); };
        REQUIRE(grad_check<double>(build, params, 1e-5).max_rel_error < 1e-5);
    }
    SECTION("penalized (Eq. 6) with mixed support") {
        auto target = head.table.encode_word("d€€a", head.config.t_max);
        auto build = [&]() {
            return penalized_sequence_loss(head.forward(feature, target), target, -12.0);
        };
        REQUIRE(grad_check<double>(build, params, 1e-5).max_rel_error < 1e-5);
    }
}
