#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "ncbf/checkpoint.hpp"

using namespace ncbf;

namespace {

const DynamicsModel kBicycle = DynamicsModel::defaults(DynamicsKind::Bicycle);

Checkpoint small_checkpoint(Method method) {
    Rng rng(5);
    const InputScaling s = InputScaling::for_task(kBicycle, Bounds{});
    Checkpoint ck;
    ck.method = method;
    ck.dynamics = kBicycle;
    ck.config.hidden_width = 6;
    ck.config.seed = 77;
    ck.models.cbf = {MlpParams::uniform_init(kStateDim, 6, 1, rng), s};
    if (method == Method::NcbfBc) {
        ck.models.rejection = RejectionModel{MlpParams::uniform_init(kStateDim, 6, 2, rng), s, ck.config.c};
        ck.models.actor = ActorModel{MlpParams::uniform_init(kStateDim, 6, 2, rng), s, kBicycle.u_min, kBicycle.u_max};
    }
    for (int t = 1; t <= 3; ++t) ck.curve.push_back({t, 0.1 * t, -0.2 * t, 1.0 / 3.0 * t, 7 * t, 3, 0.5 + t});
    ck.run_config = "# some run config\nkey = value\n";
    return ck;
}

std::string temp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / ("ncbf_test_" + name)).string();
}

}  // namespace

TEST(GitBlobHash, KnownValues) {
    EXPECT_EQ(git_blob_hash(""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    EXPECT_EQ(git_blob_hash("hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST(Checkpoint, RoundTripIsBitExact) {
    for (Method m : {Method::NcbfBc, Method::Ncbf}) {
        const Checkpoint ck = small_checkpoint(m);
        const std::string bytes = serialize_checkpoint(ck);
        const Checkpoint back = parse_checkpoint(bytes);
        EXPECT_EQ(serialize_checkpoint(back), bytes);
        EXPECT_EQ(back.method, m);
        EXPECT_EQ(back.curve, ck.curve);
        EXPECT_EQ(back.run_config, ck.run_config);
        EXPECT_EQ(back.models.cbf.params, ck.models.cbf.params);
        EXPECT_EQ(back.models.cbf.scaling, ck.models.cbf.scaling);
        EXPECT_EQ(back.models.rejection.has_value(), m == Method::NcbfBc);
        EXPECT_EQ(back.dynamics.kind, DynamicsKind::Bicycle);
        EXPECT_EQ(back.dynamics.u_max, kBicycle.u_max);
        EXPECT_EQ(back.config.seed, 77u);
        const State probe{3, 4, 0.5, 0.2, -0.1};
        EXPECT_EQ(cbf_value(back.models.cbf, probe), cbf_value(ck.models.cbf, probe));
        if (m == Method::NcbfBc) {
            EXPECT_EQ(back.models.actor->control(probe).vec(), ck.models.actor->control(probe).vec());
            EXPECT_EQ(back.models.rejection->params, ck.models.rejection->params);
        }
    }
}

TEST(Checkpoint, SaveWritesSidecarWithHash) {
    const Checkpoint ck = small_checkpoint(Method::NcbfBc);
    const std::string p = temp_path("ck.bin");
    save_checkpoint(ck, p);
    std::ifstream side(p + ".txt");
    std::stringstream text;
    text << side.rdbuf();
    EXPECT_EQ(text.str(), checkpoint_header(ck));
    EXPECT_NE(text.str().find("config_hash=" + git_blob_hash(ck.run_config)), std::string::npos);
    EXPECT_NE(text.str().find("method=ncbf-bc"), std::string::npos);
    EXPECT_EQ(serialize_checkpoint(load_checkpoint(p)), serialize_checkpoint(ck));
    std::filesystem::remove(p);
    std::filesystem::remove(p + ".txt");
}

TEST(Checkpoint, TamperedConfigDetected) {
    std::string bytes = serialize_checkpoint(small_checkpoint(Method::NcbfBc));
    bytes.back() = 'X';
    EXPECT_THROW(parse_checkpoint(bytes), FormatError);
}

TEST(Checkpoint, TruncatedAndForeignFilesRejected) {
    const std::string bytes = serialize_checkpoint(small_checkpoint(Method::Ncbf));
    EXPECT_THROW(parse_checkpoint(bytes.substr(0, bytes.size() - 40)), FormatError);
    EXPECT_THROW(parse_checkpoint("hello world\n"), FormatError);
    EXPECT_THROW(parse_checkpoint(bytes + "extra"), FormatError);
}

TEST(Checkpoint, MissingFileIsConfigError) {
    EXPECT_THROW(load_checkpoint("/nonexistent/model.ckpt"), ConfigError);
}

TEST(CurveCsv, HeaderAndRows) {
    const std::string csv = curve_csv(small_checkpoint(Method::NcbfBc).curve);
    EXPECT_EQ(csv.rfind("iteration,rejection_loss,actor_loss,cbf_loss,annotated_safe,annotated_unsafe,anchor_mean\n1,", 0),
              0u);
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}
