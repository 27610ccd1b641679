#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <queue>
#include <set>

#include "support.hpp"
#include "tumorsearch/core/binary_io.hpp"
#include "tumorsearch/phantom/generator.hpp"
#include "tumorsearch/phantom/split.hpp"

using namespace tumorsearch;
using namespace tumorsearch::phantom;

namespace {

PhantomConfig small_config(int n_images = 6) {
    PhantomConfig c;
    c.volume_shape = Shape3{{40, 40, 40}};
    c.n_images = n_images;
    c.max_size_mm = 12.0;
    c.seed = 7;
    return c;
}

std::string file_hash(const std::filesystem::path& p) { return io::hash_file(p); }

}  // namespace

TEST(PhantomConfig, RejectsInvalidFieldsByName) {
    PhantomConfig c;
    c.type_priors = {0.5, 0.5, 0.5};
    try {
        c.validate();
        FAIL() << "expected ConfigError";
    } catch (const ConfigError& e) {
        EXPECT_EQ(e.field(), "type_priors");
    }
    c = PhantomConfig{};
    c.n_regions = 1;
    EXPECT_THROW(c.validate(), ConfigError);
    c = PhantomConfig{};
    c.min_size_mm = 1.0;  // under two voxels
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(nlohmann::json({{"n_imgs", 3}}).get<PhantomConfig>(), ConfigError);
}

TEST(PhantomConfig, JsonRoundTrip) {
    PhantomConfig c = small_config();
    c.noise_sigma = 0.07;
    const PhantomConfig back = nlohmann::json(c).get<PhantomConfig>();
    EXPECT_EQ(nlohmann::json(back), nlohmann::json(c));
}

TEST(GenerateDataset, SameSeedByteIdentical) {
    tstest::TempDir a("gen_a"), b("gen_b");
    const auto ma = generate_dataset(small_config(), a.path());
    generate_dataset(small_config(), b.path());
    EXPECT_EQ(file_hash(a / "manifest.json"), file_hash(b / "manifest.json"));
    for (const auto& image : ma.images) {
        EXPECT_EQ(file_hash(a / image.volume_path), file_hash(b / image.volume_path));
        EXPECT_EQ(file_hash(a / image.mask_path), file_hash(b / image.mask_path));
    }
}

TEST(GenerateDataset, DefaultSuiteCountsAndInvariants) {
    tstest::TempDir dir("gen_default");
    PhantomConfig config;  // 120 images of 64^3
    const auto m = generate_dataset(config, dir.path());
    ASSERT_EQ(m.images.size(), 120u);
    EXPECT_GE(m.tumor_count(), 120u);
    EXPECT_LE(m.tumor_count(), 360u);

    std::set<std::string> ids;
    std::map<TumorType, int> types;
    std::set<std::pair<int, int>> binary_values;  // (task, value)
    std::size_t missing = 0, label_slots = 0;
    for (const auto& image : m.images) {
        const auto mask = m.load_mask(image);
        const auto volume = m.load_volume(image);
        for (float v : volume.data) ASSERT_TRUE(std::isfinite(v));
        // Rebuild per-tumor masks from the bounding boxes: voxels of a tumor
        // lie inside its box, boxes of one image never share a mask voxel.
        Array3<std::uint8_t> owner(image.shape);
        for (std::size_t i = 0; i < image.tumors.size(); ++i) {
            const auto& t = image.tumors[i];
            ASSERT_TRUE(ids.insert(t.tumor_id).second);
            ++types[t.labels.type];
            for (Task task : {Task::left_right, Task::front_rear, Task::upper_lower}) {
                if (auto v = t.labels.get(task)) binary_values.insert({static_cast<int>(task), *v});
            }
            for (Task task : {Task::region, Task::left_right, Task::front_rear, Task::upper_lower}) {
                ++label_slots;
                if (!t.labels.get(task)) ++missing;
            }
        }
        std::size_t mask_voxels = 0;
        for (auto v : mask.data) mask_voxels += v != 0;
        std::size_t box_voxels = 0;
        for (const auto& t : image.tumors) {
            for (int x = t.bbox.start[0]; x < t.bbox.stop[0]; ++x) {
                for (int y = t.bbox.start[1]; y < t.bbox.stop[1]; ++y) {
                    for (int z = t.bbox.start[2]; z < t.bbox.stop[2]; ++z) {
                        if (mask(x, y, z)) {
                            ASSERT_EQ(owner(x, y, z), 0) << "boxes of " << image.image_id << " share mask voxels";
                            owner(x, y, z) = 1;
                            ++box_voxels;
                        }
                    }
                }
            }
        }
        EXPECT_EQ(mask_voxels, box_voxels) << "mask voxel outside every box in " << image.image_id;
    }
    for (int t = 0; t < kNumTumorTypes; ++t) EXPECT_GT(types[static_cast<TumorType>(t)], 0);
    EXPECT_EQ(binary_values.size(), 6u);
    // every tumor has 4 optional labels; the expected missing share is 5%
    const double rate = static_cast<double>(missing) / static_cast<double>(label_slots);
    EXPECT_NEAR(rate, 0.05, 0.03);
    // type counts follow the priors
    const double n = static_cast<double>(m.tumor_count());
    EXPECT_NEAR(types[TumorType::metastasis] / n, 0.40, 0.08);
    EXPECT_NEAR(types[TumorType::meningioma] / n, 0.35, 0.08);
    EXPECT_NEAR(types[TumorType::schwannoma] / n, 0.25, 0.08);
}

TEST(GenerateDataset, DegeneratePriorGivesOneType) {
    tstest::TempDir dir("gen_prior");
    auto c = small_config(4);
    c.type_priors = {1.0, 0.0, 0.0};
    const auto m = generate_dataset(c, dir.path());
    for (const auto& image : m.images) {
        for (const auto& t : image.tumors) EXPECT_EQ(t.labels.type, TumorType::metastasis);
    }
}

TEST(GenerateImage, RecordsMatchRederivedLabelsAndAreConnected) {
    const PhantomConfig c = small_config(8);
    for (int i = 0; i < c.n_images; ++i) {
        const auto g = generate_image(c, i);
        // label each tumor by flood fill over 6-neighbors of the mask
        Array3<int> comp(g.mask.shape, 0);
        int n_comp = 0;
        for (int x = 0; x < g.mask.shape[0]; ++x) {
            for (int y = 0; y < g.mask.shape[1]; ++y) {
                for (int z = 0; z < g.mask.shape[2]; ++z) {
                    if (!g.mask(x, y, z) || comp(x, y, z)) continue;
                    ++n_comp;
                    std::queue<std::array<int, 3>> q;
                    q.push({x, y, z});
                    comp(x, y, z) = n_comp;
                    while (!q.empty()) {
                        const auto p = q.front();
                        q.pop();
                        for (int a = 0; a < 3; ++a) {
                            for (int d : {-1, 1}) {
                                auto nb = p;
                                nb[a] += d;
                                if (nb[a] < 0 || nb[a] >= g.mask.shape[a]) continue;
                                if (!g.mask(nb[0], nb[1], nb[2]) || comp(nb[0], nb[1], nb[2])) continue;
                                comp(nb[0], nb[1], nb[2]) = n_comp;
                                q.push(nb);
                            }
                        }
                    }
                }
            }
        }
        ASSERT_EQ(static_cast<std::size_t>(n_comp), g.tumors.size()) << "image " << i;
        for (int k = 1; k <= n_comp; ++k) {
            const auto d = derive_labels(comp, c.voxel_spacing_mm, c.n_regions, k);
            // find the record with this box
            const TumorRecord* rec = nullptr;
            for (const auto& t : g.tumors) {
                if (t.bbox == d.bbox) rec = &t;
            }
            ASSERT_NE(rec, nullptr) << "no record for component " << k << " of image " << i;
            EXPECT_DOUBLE_EQ(rec->labels.linear_size_mm, d.linear_size_mm);
            if (rec->labels.left_right) {
                EXPECT_EQ(*rec->labels.left_right, d.left_right);
            }
            if (rec->labels.front_rear) {
                EXPECT_EQ(*rec->labels.front_rear, d.front_rear);
            }
            if (rec->labels.upper_lower) {
                EXPECT_EQ(*rec->labels.upper_lower, d.upper_lower);
            }
            if (rec->labels.region) {
                EXPECT_EQ(*rec->labels.region, d.region);
            }
        }
        // strictly inside the brain support
        for (int x = 0; x < g.mask.shape[0]; ++x) {
            for (int y = 0; y < g.mask.shape[1]; ++y) {
                for (int z = 0; z < g.mask.shape[2]; ++z) {
                    if (g.mask(x, y, z)) {
                        ASSERT_LT(g.brain.radius({double(x), double(y), double(z)}), 1.0);
                    }
                }
            }
        }
    }
}

TEST(SynthBrain, NoiselessBackgroundIsZero) {
    PhantomConfig c = small_config();
    c.noise_sigma = 0.0;
    Rng rng(11);
    const auto brain = synth_brain(rng, c);
    for (int x = 0; x < c.volume_shape[0]; ++x) {
        for (int y = 0; y < c.volume_shape[1]; ++y) {
            for (int z = 0; z < c.volume_shape[2]; ++z) {
                if (!brain.model.support.contains({double(x), double(y), double(z)})) {
                    ASSERT_EQ(brain.volume(x, y, z), 0.0f);
                }
            }
        }
    }
}

TEST(SynthBrain, SameRngStateSameVolume) {
    const PhantomConfig c = small_config();
    Rng a(5), b(5);
    EXPECT_EQ(synth_brain(a, c).volume.data, synth_brain(b, c).volume.data);
}

TEST(SynthBrain, SupportFractionOverSeeds) {
    PhantomConfig c;  // default 64^3
    c.noise_sigma = 0.0;
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        Rng rng(seed);
        const auto brain = synth_brain(rng, c);
        std::size_t inside = 0;
        for (int x = 0; x < 64; ++x) {
            for (int y = 0; y < 64; ++y) {
                for (int z = 0; z < 64; ++z) inside += brain.model.support.contains({double(x), double(y), double(z)});
            }
        }
        const double f = static_cast<double>(inside) / (64.0 * 64.0 * 64.0);
        EXPECT_GE(f, 0.06) << "seed " << seed;
        EXPECT_LE(f, 0.35) << "seed " << seed;
    }
}

TEST(SynthTumor, SchwannomaCentroidsNearMirroredAnchors) {
    PhantomConfig c;
    Rng rng(17);
    const auto brain = synth_brain(rng, c).model.support;
    const Mask empty(c.volume_shape);
    const double offset = kSchwannomaAnchor[0] * brain.semi_axes[0];
    int left = 0, right = 0;
    for (int i = 0; i < 1000; ++i) {
        const double d = rng.uniform(c.min_size_mm, 12.0);
        const auto t = synth_tumor(rng, TumorType::schwannoma, d, c, brain, empty);
        if (!t) continue;
        double cx = 0.0;
        for (const auto& v : t->voxels) cx += v.index[0];
        cx /= static_cast<double>(t->voxels.size());
        const double dl = std::abs(cx - (brain.center[0] - offset));
        const double dr = std::abs(cx - (brain.center[0] + offset));
        ASSERT_LE(std::min(dl, dr), 0.25 * offset) << "draw " << i;
        (dl < dr ? left : right) += 1;
    }
    EXPECT_GT(left, 350);
    EXPECT_GT(right, 350);
}

TEST(SynthTumor, TenMillimetreBoxSide) {
    PhantomConfig c;
    Rng rng(23);
    const auto brain = synth_brain(rng, c).model.support;
    const Mask empty(c.volume_shape);
    for (TumorType type : {TumorType::metastasis, TumorType::meningioma, TumorType::schwannoma}) {
        for (int i = 0; i < 20; ++i) {
            const auto t = synth_tumor(rng, type, 10.0, c, brain, empty);
            ASSERT_TRUE(t.has_value());
            Mask m(c.volume_shape);
            for (const auto& v : t->voxels) m(v.index[0], v.index[1], v.index[2]) = 1;
            const auto d = derive_labels(m, c.voxel_spacing_mm, c.n_regions);
            EXPECT_GE(d.bbox.max_side(), 8) << to_string(type);
            EXPECT_LE(d.bbox.max_side(), 12) << to_string(type);
        }
    }
}

TEST(SynthTumor, MetastasisMaskIsAnalyticEllipsoid) {
    PhantomConfig c;
    c.noise_sigma = 0.0;
    Rng rng(29);
    const auto brain = synth_brain(rng, c).model.support;
    const Mask empty(c.volume_shape);
    for (int i = 0; i < 10; ++i) {
        const auto t = synth_tumor(rng, TumorType::metastasis, rng.uniform(4.0, 16.0), c, brain, empty);
        ASSERT_TRUE(t.has_value());
        const auto& e = t->shape.parts.at(0);
        ASSERT_EQ(t->shape.parts.size(), 1u);
        // ellipsoid of revolution: two equal radii
        EXPECT_DOUBLE_EQ(e.radii_mm[0], e.radii_mm[1]);
        std::set<std::array<int, 3>> got;
        for (const auto& v : t->voxels) got.insert(v.index);
        std::set<std::array<int, 3>> want;
        for (int x = 0; x < 64; ++x) {
            for (int y = 0; y < 64; ++y) {
                for (int z = 0; z < 64; ++z) {
                    double q = 0.0;
                    const double p[3] = {x - e.center_mm[0], y - e.center_mm[1], z - e.center_mm[2]};
                    for (int k = 0; k < 3; ++k) {
                        const double proj = p[0] * e.axes[k][0] + p[1] * e.axes[k][1] + p[2] * e.axes[k][2];
                        q += (proj / e.radii_mm[k]) * (proj / e.radii_mm[k]);
                    }
                    if (q <= 1.0) want.insert({x, y, z});
                }
            }
        }
        EXPECT_EQ(got, want);
    }
}

TEST(SynthTumor, ContrastAtLeastThreeSigma) {
    for (double sigma : {0.0, 0.05, 0.2}) {
        for (TumorType type : {TumorType::metastasis, TumorType::meningioma, TumorType::schwannoma}) {
            for (double depth : {0.0, 0.3, 0.7, 1.0}) {
                Voxel v{{3, 5, 7}, depth};
                EXPECT_GE(tumor_contrast(type, v, sigma), 3.0 * sigma);
            }
        }
    }
}

TEST(DeriveLabels, SingleVoxel) {
    Mask m(Shape3{{64, 64, 64}});
    m(2, 3, 4) = 1;
    const auto d = derive_labels(m, {1.0, 1.0, 1.0}, 11);
    EXPECT_EQ(d.bbox, (BBox{{2, 3, 4}, {3, 4, 5}}));
    EXPECT_DOUBLE_EQ(d.linear_size_mm, 1.0);
    EXPECT_EQ(d.left_right, 0);
    EXPECT_EQ(d.front_rear, 0);
    EXPECT_EQ(d.upper_lower, 0);
}

TEST(DeriveLabels, SphereSizeWithinRasterTolerance) {
    Mask m(Shape3{{64, 64, 64}});
    for (int x = 0; x < 64; ++x) {
        for (int y = 0; y < 64; ++y) {
            for (int z = 0; z < 64; ++z) {
                const double r2 = (x - 31.5) * (x - 31.5) + (y - 31.5) * (y - 31.5) + (z - 31.5) * (z - 31.5);
                if (r2 <= 25.0) m(x, y, z) = 1;
            }
        }
    }
    const auto d = derive_labels(m, {1.0, 1.0, 1.0}, 11);
    EXPECT_GE(d.linear_size_mm, 9.0);
    EXPECT_LE(d.linear_size_mm, 11.0);
    // anisotropic spacing scales the side
    const auto d2 = derive_labels(m, {1.0, 2.0, 1.0}, 11);
    EXPECT_DOUBLE_EQ(d2.linear_size_mm, 2.0 * d.bbox.side(1));
}

TEST(DeriveLabels, MidplaneTieGoesLow) {
    Mask m(Shape3{{8, 8, 8}});
    m(3, 3, 3) = 1;
    m(4, 4, 4) = 1;  // centroid 3.5 == (8 - 1) / 2 on every axis
    const auto d = derive_labels(m, {1.0, 1.0, 1.0}, 11);
    EXPECT_EQ(d.left_right, 0);
    EXPECT_EQ(d.front_rear, 0);
    EXPECT_EQ(d.upper_lower, 0);
}

TEST(DeriveLabels, EmptyMaskErrors) {
    Mask m(Shape3{{8, 8, 8}});
    try {
        derive_labels(m, {1.0, 1.0, 1.0}, 11);
        FAIL();
    } catch (const Error& e) {
        EXPECT_STREQ(e.what(), "no tumor voxels");
    }
}

TEST(RegionOf, ElevenCellsAllReachable) {
    const Shape3 s{{64, 64, 64}};
    std::set<int> seen;
    for (int x = 0; x < 64; x += 3) {
        for (int y = 0; y < 64; y += 1) {
            for (int z = 0; z < 64; z += 3) {
                const int r = region_of({double(x), double(y), double(z)}, s, 11);
                ASSERT_GE(r, 0);
                ASSERT_LT(r, 11);
                seen.insert(r);
            }
        }
    }
    EXPECT_EQ(seen.size(), 11u);
    // octant index from the three binary sides
    EXPECT_EQ(region_of({5, 5, 5}, s, 11), 0);
    EXPECT_EQ(region_of({60, 60, 60}, s, 11), 7);
    EXPECT_EQ(region_of({31.5, 31.5, 31.5}, s, 11), 9);
}

TEST(RegionOf, FewRegionsUseSectors) {
    const Shape3 s{{64, 64, 64}};
    std::set<int> seen;
    for (int x = 0; x < 64; ++x) {
        for (int y = 0; y < 64; ++y) seen.insert(region_of({double(x), double(y), 10.0}, s, 4));
    }
    EXPECT_EQ(seen, (std::set<int>{0, 1, 2, 3}));
}

TEST(SplitDataset, TenImagesTwoTest) {
    tstest::TempDir dir("split");
    auto c = small_config(10);
    const auto m = generate_dataset(c, dir.path());
    const auto a = split_dataset(m, 0.2, 0);
    const auto b = split_dataset(m, 0.2, 0);
    std::vector<std::string> test_a, test_b;
    for (const auto& image : a.images) {
        if (image.split == Split::test) test_a.push_back(image.image_id);
        EXPECT_NE(image.split, Split::unassigned);
    }
    for (const auto& image : b.images) {
        if (image.split == Split::test) test_b.push_back(image.image_id);
    }
    EXPECT_EQ(test_a.size(), 2u);
    EXPECT_EQ(test_a, test_b);

    const auto none = split_dataset(m, 0.0, 0);
    for (const auto& image : none.images) EXPECT_EQ(image.split, Split::train);
}

TEST(SplitDataset, TooFewImages) {
    DatasetManifest m;
    for (int i = 0; i < 4; ++i) m.images.push_back(ImageEntry{image_id_for(i), "", "", {}, {}, Split::unassigned, {}});
    EXPECT_THROW(split_dataset(m, 0.2, 0), Error);
}

TEST(Manifest, RoundTripAndPathsResolve) {
    tstest::TempDir dir("manifest");
    const auto m = split_dataset(generate_dataset(small_config(5), dir.path()), 0.2, 3);
    save_manifest(m, dir / "split.json");
    const auto back = load_manifest(dir / "split.json");
    EXPECT_EQ(to_json(back), to_json(m));
    for (const auto& image : back.images) {
        EXPECT_NO_THROW(back.load_volume(image));
        // every tumor of an image shares its split tag by construction
        EXPECT_EQ(image.split, m.image(image.image_id).split);
    }
    auto j = to_json(m);
    j["schema_version"] = 99;
    EXPECT_THROW(manifest_from_json(j, dir.path()), Error);
}

TEST(GenerateImage, TumorsStayInOneHemisphere) {
    const PhantomConfig c = small_config(20);
    int tumors = 0;
    for (int i = 0; i < c.n_images; ++i) {
        const auto g = generate_image(c, i);
        const double mid = g.brain.center[0];
        for (const auto& t : g.tumors) {
            const bool left = t.bbox.stop[0] - 1 <= mid - kMidlineGap;
            const bool right = t.bbox.start[0] >= mid + kMidlineGap;
            EXPECT_TRUE(left || right) << t.tumor_id;
            ++tumors;
        }
    }
    EXPECT_GT(tumors, 20);
}

TEST(SynthTumor, EdemaRimFadesOutsideMetastases) {
    const Shape3 s{{32, 32, 32}};
    Volume v(s, 0.5f);
    Array3<std::uint8_t> owner(s);
    BrainSupport brain{{15.5, 15.5, 15.5}, {15, 15, 15}};
    TumorShape shape;
    shape.type = TumorType::metastasis;
    shape.diameter_mm = 8.0;
    Ellipsoid body;
    body.center_mm = {16, 16, 16};
    body.radii_mm = {4, 4, 4};
    shape.parts.push_back(body);
    owner(16, 16, 16) = 1;   // a tumor voxel stays untouched
    owner(16, 16, 21) = 2;   // and so does a neighbor's
    add_edema(v, owner, shape, brain, {1.0, 1.0, 1.0});
    EXPECT_EQ(v(16, 16, 16), 0.5f);
    EXPECT_EQ(v(16, 16, 19), 0.5f);  // inside the ellipsoid
    EXPECT_EQ(v(16, 16, 21), 0.5f);
    // 1 and 2 mm outside along x
    EXPECT_NEAR(v(21, 16, 16) + 0.0, 0.5 - kEdemaDrop * (1.0 - 1.0 / kEdemaWidthMm), 1e-6);
    EXPECT_NEAR(v(22, 16, 16) + 0.0, 0.5 - kEdemaDrop * (1.0 - 2.0 / kEdemaWidthMm), 1e-6);
    EXPECT_EQ(v(23, 16, 16), 0.5f);  // 3 mm out: the rim has faded
    EXPECT_EQ(v(16, 16, 9), 0.5f);
}
