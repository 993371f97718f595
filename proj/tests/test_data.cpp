#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>
#include <set>

#include "fsr/data.hpp"

using namespace fsr;

TEST_CASE("make_gaussian_clusters: determinism and degenerate spread") {
    const BiasedDataset a = make_gaussian_clusters(4, 10, 3, 0.2, 7);
    const BiasedDataset b = make_gaussian_clusters(4, 10, 3, 0.2, 7);
    CHECK(a.features == b.features);
    CHECK(a.clean_labels == b.clean_labels);
    CHECK(a.observed_labels == b.observed_labels);

    const BiasedDataset c = make_gaussian_clusters(4, 10, 3, 0.2, 8);
    CHECK(a.features != c.features);

    // spread 0: every sample sits exactly on its class center
    const BiasedDataset tight = make_gaussian_clusters(3, 5, 2, 0.0, 1);
    for (int i = 0; i < tight.size(); ++i)
        for (int j = 0; j < tight.size(); ++j)
            if (tight.clean_labels[i] == tight.clean_labels[j])
                for (int k = 0; k < 2; ++k)
                    CHECK(tight.features(i, k) == tight.features(j, k));
    // distinct classes map to distinct centers
    CHECK(tight.features(0, 0) != tight.features(5, 0));
}

TEST_CASE("make_gaussian_clusters: clean equals observed initially, validates") {
    const BiasedDataset ds = make_gaussian_clusters(6, 20, 2, 0.15, 3);
    CHECK(ds.clean_labels == ds.observed_labels);
    CHECK(ds.size() == 120);
    ds.validate();
}

TEST_CASE("inject_uniform_noise: exact corruption count, never to the same class") {
    const BiasedDataset clean = make_gaussian_clusters(5, 200, 2, 0.1, 11);
    SUBCASE("ratio 0 is the identity") {
        const BiasedDataset same = inject_uniform_noise(clean, 0.0, 5);
        CHECK(same.observed_labels == clean.observed_labels);
    }
    SUBCASE("ratio 0.4 corrupts exactly floor(0.4 * N) rows") {
        const BiasedDataset noisy = inject_uniform_noise(clean, 0.4, 5);
        int flipped = 0;
        for (int i = 0; i < noisy.size(); ++i) {
            if (noisy.observed_labels[i] != noisy.clean_labels[i]) ++flipped;
            CHECK(noisy.clean_labels[i] == clean.clean_labels[i]);
        }
        CHECK(flipped == 400);
    }
    SUBCASE("test splits are refused") {
        const BiasedDataset test = make_gaussian_clusters(5, 10, 2, 0.1, 11, Split::test);
        CHECK_THROWS_AS(inject_uniform_noise(test, 0.2, 5), ConfigError);
    }
}

TEST_CASE("inject_uniform_noise: corrupted labels are near-uniform over other classes") {
    const int C = 5;
    const BiasedDataset clean = make_gaussian_clusters(C, 20000, 2, 0.1, 13);
    const BiasedDataset noisy = inject_uniform_noise(clean, 0.5, 17);
    // chi-squared over the off-diagonal counts of the confusion matrix
    std::vector<std::vector<int>> conf(C, std::vector<int>(C, 0));
    int flipped = 0;
    for (int i = 0; i < noisy.size(); ++i)
        if (noisy.observed_labels[i] != noisy.clean_labels[i]) {
            ++conf[noisy.clean_labels[i]][noisy.observed_labels[i]];
            ++flipped;
        }
    const double expected = static_cast<double>(flipped) / (C * (C - 1));
    double chi2 = 0.0;
    for (int a = 0; a < C; ++a)
        for (int b = 0; b < C; ++b)
            if (a != b) chi2 += (conf[a][b] - expected) * (conf[a][b] - expected) / expected;
    // 19 degrees of freedom; 43.8 is the ~0.1% tail
    CHECK(chi2 < 43.8);
}

TEST_CASE("inject_asymmetric_noise: identity map, swap map, image containment") {
    const BiasedDataset clean = make_gaussian_clusters(2, 500, 2, 0.1, 19);
    SUBCASE("identity map corrupts nothing effectively") {
        const std::vector<int> id{0, 1};
        const BiasedDataset out = inject_asymmetric_noise(clean, 0.4, id, 23);
        CHECK(out.observed_labels == clean.observed_labels);
    }
    SUBCASE("swap map flips roughly 40% of each class to its partner") {
        const std::vector<int> swap{1, 0};
        const BiasedDataset out = inject_asymmetric_noise(clean, 0.4, swap, 23);
        int flipped[2] = {0, 0};
        for (int i = 0; i < out.size(); ++i)
            if (out.observed_labels[i] != out.clean_labels[i]) {
                CHECK(out.observed_labels[i] == swap[out.clean_labels[i]]);
                ++flipped[out.clean_labels[i]];
            }
        CHECK(flipped[0] + flipped[1] == 400);
        // selection is uniform over rows, so each class carries roughly half
        CHECK(flipped[0] > 120);
        CHECK(flipped[1] > 120);
    }
    SUBCASE("map missing a class is rejected") {
        const std::vector<int> incomplete{1};
        CHECK_THROWS_AS(inject_asymmetric_noise(clean, 0.4, incomplete, 23), ConfigError);
    }
}

TEST_CASE("cyclic_confusion_map: shift by one, wraps around") {
    CHECK(cyclic_confusion_map(4) == std::vector<int>{1, 2, 3, 0});
}

TEST_CASE("make_long_tailed: frozen exponential profile values") {
    SUBCASE("mu = 1 is the identity") {
        const BiasedDataset ds = make_gaussian_clusters(4, 50, 2, 0.1, 29);
        const BiasedDataset out = make_long_tailed(ds, 1.0, 31);
        CHECK(out.size() == ds.size());
        CHECK(out.observed_labels == ds.observed_labels);
    }
    SUBCASE("C=10, n_max=1000, mu=10 -> n_0=1000, n_9=100") {
        const BiasedDataset ds = make_gaussian_clusters(10, 1000, 2, 0.1, 29);
        const BiasedDataset out = make_long_tailed(ds, 10.0, 31);
        std::vector<int> counts(10, 0);
        for (int lbl : out.clean_labels) ++counts[lbl];
        CHECK(counts[0] == 1000);
        CHECK(counts[9] == 100);
        for (int c = 0; c + 1 < 10; ++c) CHECK(counts[c] >= counts[c + 1]);
        const double ratio = static_cast<double>(counts[0]) / counts[9];
        CHECK(std::abs(ratio - 10.0) / 10.0 < 0.05);
    }
    SUBCASE("mu=200 -> n_9=5") {
        const BiasedDataset ds = make_gaussian_clusters(10, 1000, 2, 0.1, 29);
        const BiasedDataset out = make_long_tailed(ds, 200.0, 31);
        std::vector<int> counts(10, 0);
        for (int lbl : out.clean_labels) ++counts[lbl];
        CHECK(counts[0] == 1000);
        CHECK(counts[9] == 5);
    }
}

TEST_CASE("long-tail then uniform noise keeps both invariants (mixed setting)") {
    const BiasedDataset ds = make_gaussian_clusters(6, 600, 2, 0.1, 37);
    const BiasedDataset tail = make_long_tailed(ds, 10.0, 41);
    const BiasedDataset mixed = inject_uniform_noise(tail, 0.2, 43);
    int flipped = 0;
    for (int i = 0; i < mixed.size(); ++i)
        flipped += (mixed.observed_labels[i] != mixed.clean_labels[i]);
    CHECK(flipped == static_cast<int>(0.2 * tail.size()));
    std::vector<int> counts(6, 0);
    for (int lbl : mixed.clean_labels) ++counts[lbl];
    for (int c = 0; c + 1 < 6; ++c) CHECK(counts[c] >= counts[c + 1]);
}

TEST_CASE("EpochSampler: each epoch is a permutation, deterministic per seed") {
    EpochSampler sampler(10, 99);
    std::vector<int> seen;
    while (!sampler.epoch_done()) {
        const std::vector<int> batch = sampler.next(3);
        seen.insert(seen.end(), batch.begin(), batch.end());
    }
    CHECK(seen.size() == 10);
    std::vector<int> sorted = seen;
    std::sort(sorted.begin(), sorted.end());
    std::vector<int> want(10);
    std::iota(want.begin(), want.end(), 0);
    CHECK(sorted == want);

    EpochSampler again(10, 99);
    std::vector<int> replay;
    while (!again.epoch_done()) {
        const std::vector<int> batch = again.next(3);
        replay.insert(replay.end(), batch.begin(), batch.end());
    }
    CHECK(replay == seen);

    // b = N: one batch covers the whole epoch
    EpochSampler whole(6, 5);
    CHECK(whole.next(6).size() == 6);
    CHECK(whole.epoch_done());
}

TEST_CASE("make_batch: one-hot observed labels, row indices preserved") {
    BiasedDataset ds = make_gaussian_clusters(3, 4, 2, 0.1, 53);
    ds.observed_labels[5] = (ds.observed_labels[5] + 1) % 3;
    const Batch b = make_batch(ds, {5, 0, 11});
    CHECK(b.indices == std::vector<int>{5, 0, 11});
    for (int i = 0; i < 3; ++i) {
        const int obs = ds.observed_labels[b.indices[i]];
        for (int c = 0; c < 3; ++c) CHECK(b.labels(i, c) == (c == obs ? 1.0 : 0.0));
        for (int k = 0; k < 2; ++k) CHECK(b.features(i, k) == ds.features(b.indices[i], k));
    }
}

TEST_CASE("CSV round trip is the identity") {
    const std::string path = (std::filesystem::temp_directory_path() / "fsr_rt.csv").string();
    BiasedDataset train = make_gaussian_clusters(3, 8, 2, 0.2, 59);
    train = inject_uniform_noise(train, 0.25, 61);
    const BiasedDataset test = make_gaussian_clusters(3, 4, 2, 0.2, 60, Split::test);
    save_csv(path, train, test);
    const auto [rt_train, rt_test] = load_csv(path);
    CHECK(rt_train.features == train.features);
    CHECK(rt_train.clean_labels == train.clean_labels);
    CHECK(rt_train.observed_labels == train.observed_labels);
    CHECK(rt_train.num_classes == train.num_classes);
    CHECK(rt_test.features == test.features);
    CHECK(rt_test.clean_labels == test.clean_labels);
    std::remove(path.c_str());
}

TEST_CASE("load_csv: error cases carry useful diagnostics") {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path();

    SUBCASE("missing observed_label column names the column") {
        const std::string path = (dir / "fsr_badhdr.csv").string();
        {
            std::FILE* f = std::fopen(path.c_str(), "w");
            std::fputs("f0,f1,clean_label,split\n0,0,0,train\n", f);
            std::fclose(f);
        }
        CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains("observed_label"), ParseError);
        std::remove(path.c_str());
    }
    SUBCASE("empty file is an error, not an empty dataset") {
        const std::string path = (dir / "fsr_empty.csv").string();
        std::fclose(std::fopen(path.c_str(), "w"));
        CHECK_THROWS_AS(load_csv(path), ParseError);
        std::remove(path.c_str());
    }
    SUBCASE("malformed row reports its line number") {
        const std::string path = (dir / "fsr_badrow.csv").string();
        {
            std::FILE* f = std::fopen(path.c_str(), "w");
            std::fputs("f0,f1,clean_label,observed_label,split\n", f);
            std::fputs("0.5,0.5,0,0,train\n", f);
            std::fputs("0.5,not_a_number,0,0,train\n", f);
            std::fclose(f);
        }
        CHECK_THROWS_WITH_AS(load_csv(path), doctest::Contains("3"), ParseError);
        std::remove(path.c_str());
    }
    SUBCASE("label out of range is rejected") {
        const std::string path = (dir / "fsr_badlabel.csv").string();
        {
            std::FILE* f = std::fopen(path.c_str(), "w");
            std::fputs("f0,clean_label,observed_label,split\n", f);
            std::fputs("0.5,0,0,train\n0.5,-1,0,train\n0.5,1,1,test\n", f);
            std::fclose(f);
        }
        CHECK_THROWS(load_csv(path));
        std::remove(path.c_str());
    }
    SUBCASE("nonexistent file") {
        CHECK_THROWS_AS(load_csv((dir / "fsr_nope_missing.csv").string()), ParseError);
    }
}
