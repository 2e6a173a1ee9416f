#include "fairsparse/config.hpp"

#include <gtest/gtest.h>

#include "fairsparse/errors.hpp"

namespace fairsparse {
namespace {

const std::string kBase = R"(# small synthetic run
data.source = synthetic
data.synthetic.group_sizes = 100, 50
data.synthetic.noise_scales = 0.5, 0.9
model.hidden = 16, 16
pretrain.epochs = 3
pretrain.batch_size = 32
finetune.epochs = 20
finetune.formulation = ceag
finetune.epsilon = 0.02
finetune.dual_lr = 0.05
seeds = 0, 1, 2
run.name = "ceag-small"
)";

std::string with(const std::string& extra) { return kBase + extra + "\n"; }

std::string without(const std::string& key) {
  std::string out;
  std::size_t pos = 0;
  while (pos < kBase.size()) {
    const auto nl = kBase.find('\n', pos);
    const std::string line = kBase.substr(pos, nl - pos);
    if (line.rfind(key + " ", 0) != 0) out += line + "\n";
    pos = nl + 1;
  }
  return out;
}

TEST(Config, ParsesValidFile) {
  const auto c = parse_config(kBase);
  EXPECT_EQ(c.source, DataSource::kSynthetic);
  EXPECT_EQ(c.synthetic.group_sizes, (std::vector<std::size_t>{100, 50}));
  EXPECT_EQ(c.hidden_dims, (std::vector<std::size_t>{16, 16}));
  EXPECT_EQ(c.pretrain.epochs, 3);
  EXPECT_EQ(c.pretrain.batch_size, 32u);
  EXPECT_EQ(c.formulation.kind, FormulationKind::kCeag);
  EXPECT_EQ(c.formulation.epsilon, 0.02);
  EXPECT_EQ(c.dual.lr, 0.05);
  EXPECT_EQ(c.seeds, (std::vector<std::uint64_t>{0, 1, 2}));
  EXPECT_EQ(c.run_name, "ceag-small");
  EXPECT_TRUE(c.use_buffers);
  EXPECT_EQ(c.buffer_size, 40u);
  // defaults
  EXPECT_EQ(c.gmp.final_sparsity, 0.9);
  EXPECT_EQ(c.gmp.end_epoch, 14);
  EXPECT_EQ(c.finetune.sgd.lr, 0.01);
  EXPECT_EQ(c.finetune.sgd.momentum, 0.9);
  EXPECT_EQ(c.finetune.sgd.weight_decay, 1e-4);
  EXPECT_EQ(c.finetune.lr_schedule.milestones, (std::vector<double>{0.6, 0.8, 0.9}));

  const auto ft = c.finetune_train_config();
  ASSERT_TRUE(ft.gmp.has_value());
  EXPECT_EQ(ft.total_epochs, 20);
  EXPECT_EQ(c.pretrain_train_config().formulation.kind, FormulationKind::kNft);
  EXPECT_FALSE(c.pretrain_train_config().gmp.has_value());
}

TEST(Config, FinetuneEpochsDefault) {
  std::string text = kBase;
  text.replace(text.find("finetune.epochs = 20\n"), 21, "");
  EXPECT_EQ(parse_config(text).finetune.epochs, 60);
}

TEST(Config, UnknownAndDuplicateKeys) {
  try {
    parse_config(with("finetune.epsilom = 0.1"), "x.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("x.cfg:14"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("epsilom"), std::string::npos);
  }
  EXPECT_THROW(parse_config(with("seeds = 4")), ConfigError);
  EXPECT_THROW(parse_config(with("no equals sign")), ParseError);
}

TEST(Config, MissingRequiredKeys) {
  for (const char* key : {"data.source", "model.hidden", "pretrain.epochs",
                          "finetune.formulation", "seeds", "finetune.epsilon",
                          "finetune.dual_lr"}) {
    try {
      parse_config(without(key));
      ADD_FAILURE() << key;
    } catch (const ConfigError& e) {
      EXPECT_NE(std::string(e.what()).find(key), std::string::npos) << e.what();
    }
  }
}

TEST(Config, InvalidValues) {
  const std::vector<std::pair<std::string, std::string>> bad = {
      {"pretrain.batch_size", "0"},
      {"pretrain.batch_size", "abc"},
      {"finetune.dual_lr", "-1"},
      {"finetune.epsilon", "nan"},
      {"data.source", "parquet"},
      {"finetune.formulation", "magic"},
      {"model.hidden", "16"},
      {"seeds", "1, 1"},
      {"seeds", "-3"},
      {"finetune.epochs", "14"},
      {"finetune.momentum", "1.5"},
      {"finetune.nesterov", "yes"},
      {"gmp.final_sparsity", "1.0"},
      {"data.synthetic.noise_scales", "0.5"},
      {"run.name", "a/b"},
  };
  for (const auto& [key, value] : bad) {
    const std::string text = without(key) + key + " = " + value + "\n";
    EXPECT_THROW(parse_config(text), ConfigError) << key << " = " << value;
  }
}

TEST(Config, FormulationSpecificKeys) {
  std::string nft = without("finetune.formulation");
  nft = nft.substr(0, nft.find("finetune.epsilon")) +
        nft.substr(nft.find('\n', nft.find("finetune.epsilon")) + 1);
  const auto c = parse_config(nft + "finetune.formulation = nft\n");
  EXPECT_EQ(c.formulation.kind, FormulationKind::kNft);
  EXPECT_FALSE(c.use_buffers);
  // epsilon is meaningless for equal-loss
  EXPECT_THROW(parse_config(without("finetune.formulation") + "finetune.formulation = el\n"),
               ConfigError);
  EXPECT_THROW(parse_config(with("data.csv.train = a.csv")), ConfigError);
}

TEST(Config, CsvSource) {
  const std::string text = R"(data.source = csv
data.csv.train = train.csv
data.csv.test = test.csv
model.hidden = 8, 8
pretrain.epochs = 2
finetune.formulation = nft
seeds = 7
)";
  const auto c = parse_config(text);
  EXPECT_EQ(c.source, DataSource::kCsv);
  EXPECT_EQ(c.csv_train, "train.csv");
  EXPECT_THROW(parse_config(text + "data.synthetic.feature_dim = 3\n"), ConfigError);
}

TEST(Config, HashIgnoresSeedsAndOutput) {
  const auto base = config_hash(parse_config(kBase));
  EXPECT_EQ(base.size(), 16u);
  EXPECT_EQ(config_hash(parse_config(with("output.dir = elsewhere"))), base);
  std::string reseeded = without("seeds") + "seeds = 9\n";
  EXPECT_EQ(config_hash(parse_config(reseeded)), base);
  // comments and whitespace are irrelevant
  EXPECT_EQ(config_hash(parse_config("   # hi\n" + kBase + "\n\n")), base);

  EXPECT_NE(config_hash(parse_config(without("finetune.epsilon") + "finetune.epsilon = 0.03\n")),
            base);
  EXPECT_NE(config_hash(parse_config(with("finetune.buffer_size = 20"))), base);
  // stating a default explicitly does not change anything
  EXPECT_EQ(config_hash(parse_config(with("gmp.final_sparsity = 0.9"))), base);
}

TEST(Config, CanonicalEntriesSorted) {
  const auto entries = canonical_entries(parse_config(kBase));
  for (std::size_t i = 1; i < entries.size(); ++i) EXPECT_LT(entries[i - 1].first, entries[i].first);
}

TEST(Config, LoadMissingFile) {
  EXPECT_THROW(load_config("/nonexistent/path.cfg"), IoError);
}

}  // namespace
}  // namespace fairsparse
