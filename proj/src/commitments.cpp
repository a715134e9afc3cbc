#include "vdi/commitments.hpp"

#include <cstring>
#include <fstream>

namespace vdi {

Bytes canonical_serialize(const HiddenState& hs) {
  hs.validate();
  Bytes out;
  out.reserve(9 + hs.scalar_count() * 4);
  out.push_back(kSerializationVersion);
  append_u32(out, static_cast<std::uint32_t>(hs.values.rows()));
  append_u32(out, static_cast<std::uint32_t>(hs.values.cols()));
  const float* p = hs.values.data();
  for (std::size_t k = 0; k < hs.scalar_count(); ++k) append_f32(out, p[k]);
  return out;
}

HiddenState canonical_deserialize(std::span<const Byte> bytes) {
  if (bytes.size() < 9) throw TraceIoError("canonical blob shorter than header");
  if (bytes[0] != kSerializationVersion) throw TraceIoError("unknown serialization version");
  const std::uint32_t rows = read_u32(bytes, 1);
  const std::uint32_t cols = read_u32(bytes, 5);
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  if (bytes.size() != 9 + n * 4) throw TraceIoError("canonical blob length mismatch");
  HiddenState hs;
  hs.values.resize(rows, cols);
  for (std::size_t k = 0; k < n; ++k) hs.values.data()[k] = read_f32(bytes, 9 + k * 4);
  return hs;
}

Digest hash_leaf(float scalar) {
  Hasher h;
  h.update(tag::kLeaf).update_u32(float_bits(scalar));
  return h.finish();
}

namespace {

Digest hash_leaf_chunk(std::span<const float> chunk) {
  Hasher h;
  h.update(tag::kLeaf);
  for (float v : chunk) h.update_u32(float_bits(v));
  return h.finish();
}

Digest hash_node(const Digest& left, const Digest& right) {
  Hasher h;
  h.update(tag::kNode).update(left).update(right);
  return h.finish();
}

}  // namespace

MerkleTree MerkleTree::build(std::span<const float> scalars, std::size_t scalars_per_leaf) {
  if (scalars.empty()) throw EmptyLeafSet();
  if (scalars_per_leaf == 0) throw Error("scalars_per_leaf must be nonzero");

  MerkleTree tree;
  tree.scalars_.assign(scalars.begin(), scalars.end());
  tree.chunk_ = scalars_per_leaf;

  std::vector<Digest> level;
  if (scalars_per_leaf == 1) {
    level.reserve(scalars.size());
    for (float v : scalars) level.push_back(hash_leaf(v));
  } else {
    for (std::size_t i = 0; i < scalars.size(); i += scalars_per_leaf) {
      const std::size_t len = std::min(scalars_per_leaf, scalars.size() - i);
      level.push_back(hash_leaf_chunk(scalars.subspan(i, len)));
    }
  }
  tree.leaf_count_ = level.size();

  tree.levels_.push_back(std::move(level));
  while (tree.levels_.back().size() > 1) {
    const std::vector<Digest>& below = tree.levels_.back();
    std::vector<Digest> above;
    above.reserve((below.size() + 1) / 2);
    for (std::size_t i = 0; i < below.size(); i += 2) {
      const Digest& left = below[i];
      // Odd width: duplicate the last digest as its own sibling.
      const Digest& right = (i + 1 < below.size()) ? below[i + 1] : below[i];
      above.push_back(hash_node(left, right));
    }
    tree.levels_.push_back(std::move(above));
  }
  return tree;
}

InclusionProof MerkleTree::open(std::uint64_t index) const {
  if (chunk_ != 1) throw Error("openings are only defined for scalar leaves");
  if (index >= leaf_count_) throw IndexOutOfRange();

  InclusionProof proof;
  proof.leaf_index = index;
  proof.leaf_value = scalars_[index];
  std::uint64_t pos = index;
  for (std::size_t lvl = 0; lvl + 1 < levels_.size(); ++lvl) {
    const std::vector<Digest>& level = levels_[lvl];
    const std::uint64_t sibling = (pos % 2 == 0) ? (pos + 1 < level.size() ? pos + 1 : pos)
                                                 : pos - 1;
    proof.path.push_back({level[sibling], pos % 2 == 0});
    pos /= 2;
  }
  return proof;
}

bool merkle_verify(const MerkleCommitment& commitment, const InclusionProof& proof) {
  if (commitment.leaf_count == 0) return false;
  if (proof.leaf_index >= commitment.leaf_count) return false;

  Digest h = hash_leaf(proof.leaf_value);
  std::uint64_t pos = proof.leaf_index;
  std::uint64_t width = commitment.leaf_count;
  std::size_t step = 0;
  while (width > 1) {
    if (step >= proof.path.size()) return false;
    const ProofStep& ps = proof.path[step++];
    const bool expect_right = pos % 2 == 0;
    if (ps.sibling_on_right != expect_right) return false;
    if (expect_right && pos + 1 == width) {
      // Duplicate-last padding: the sibling must be the node itself.
      if (ps.sibling != h) return false;
    }
    h = expect_right ? hash_node(h, ps.sibling) : hash_node(ps.sibling, h);
    pos /= 2;
    width = (width + 1) / 2;
  }
  return step == proof.path.size() && h == commitment.root;
}

VerdictCommitment commit_verdict(bool verdict, const Salt& salt) {
  Hasher h;
  h.update(tag::kVerdict);
  const Byte b = verdict ? 1 : 0;
  h.update(std::span<const Byte>(&b, 1));
  h.update(std::span<const Byte>(salt.data(), salt.size()));
  return {h.finish()};
}

bool open_verdict(const VerdictCommitment& c, bool verdict, const Salt& salt) {
  return commit_verdict(verdict, salt) == c;
}

namespace {
constexpr char kTraceMagic[8] = {'V', 'D', 'I', 'T', 'R', 'A', 'C', 'E'};
}

void write_trace_file(const std::filesystem::path& path, std::span<const HiddenState> states) {
  Bytes out(kTraceMagic, kTraceMagic + sizeof(kTraceMagic));
  append_u32(out, static_cast<std::uint32_t>(states.size()));
  for (const HiddenState& hs : states) {
    append_u32(out, static_cast<std::uint32_t>(hs.task_id.size()));
    out.insert(out.end(), hs.task_id.begin(), hs.task_id.end());
    append_u32(out, hs.segment_index);
    append_u32(out, hs.token_index);
    Bytes blob = canonical_serialize(hs);
    append_u64(out, blob.size());
    out.insert(out.end(), blob.begin(), blob.end());
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw TraceIoError("cannot open " + path.string() + " for writing");
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw TraceIoError("short write to " + path.string());
}

std::vector<HiddenState> read_trace_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TraceIoError("cannot open " + path.string());
  Bytes raw((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (raw.size() < sizeof(kTraceMagic) + 4 ||
      std::memcmp(raw.data(), kTraceMagic, sizeof(kTraceMagic)) != 0) {
    throw TraceIoError("not a trace file: " + path.string());
  }
  std::size_t off = sizeof(kTraceMagic);
  const std::uint32_t count = read_u32(raw, off);
  off += 4;

  std::vector<HiddenState> states;
  states.reserve(count);
  try {
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint32_t id_len = read_u32(raw, off);
      off += 4;
      if (off + id_len > raw.size()) throw TraceIoError("truncated task id");
      std::string task_id(raw.begin() + off, raw.begin() + off + id_len);
      off += id_len;
      const std::uint32_t segment = read_u32(raw, off);
      const std::uint32_t token = read_u32(raw, off + 4);
      off += 8;
      const std::uint64_t blob_len = read_u64(raw, off);
      off += 8;
      if (off + blob_len > raw.size()) throw TraceIoError("truncated tensor blob");
      HiddenState hs = canonical_deserialize(std::span<const Byte>(raw).subspan(off, blob_len));
      off += blob_len;
      hs.task_id = std::move(task_id);
      hs.segment_index = segment;
      hs.token_index = token;
      hs.validate();
      states.push_back(std::move(hs));
    }
  } catch (const Error& e) {
    throw TraceIoError(path.string() + ": " + e.what());
  }
  if (off != raw.size()) throw TraceIoError("trailing bytes in " + path.string());
  return states;
}

}  // namespace vdi
