#include "lrds/serialize.hpp"

namespace lrds {

using nlohmann::json;

namespace {

std::uint64_t parse_hex(const json& j) { return std::stoull(j.get<std::string>(), nullptr, 16); }

json word_json(const Word& w) {
  json j{{"tag", to_string(w.tag)}};
  if (w.tag != ContentTag::Zero) j["value"] = hex(w.value);
  return j;
}

Word word_from(const json& j) {
  Word w;
  w.tag = parse_content_tag(j.at("tag").get<std::string>());
  if (j.contains("value")) w.value = parse_hex(j.at("value"));
  return w;
}

}  // namespace

json to_json(const AddressSpace& space) {
  json ranges = json::array();
  for (const Range& r : space.ranges())
    ranges.push_back({{"base", hex(r.base)},
                      {"pages", r.pages},
                      {"perm", r.perm.str()},
                      {"content", word_json(r.content)},
                      {"label", r.label}});
  json words = json::array();
  for (const auto& [addr, w] : space.words()) {
    json e = word_json(w);
    e["addr"] = hex(addr);
    words.push_back(std::move(e));
  }
  const auto& z = space.zones();
  return {{"schema", kSchemaVersion},
          {"arch", to_string(space.arch().name)},
          {"zones",
           {{"mmap_floor", hex(z.mmap_floor)},
            {"mmap_top", hex(z.mmap_top)},
            {"heap_base", hex(z.heap_base)},
            {"heap_limit", hex(z.heap_limit)}}},
          {"ranges", std::move(ranges)},
          {"words", std::move(words)}};
}

AddressSpace address_space_from_json(const json& j) {
  const Arch arch = Arch::of(parse_arch(j.at("arch").get<std::string>()));
  ZoneConfig z;
  const auto& zj = j.at("zones");
  z.mmap_floor = parse_hex(zj.at("mmap_floor"));
  z.mmap_top = parse_hex(zj.at("mmap_top"));
  z.heap_base = parse_hex(zj.at("heap_base"));
  z.heap_limit = parse_hex(zj.at("heap_limit"));
  AddressSpace s(arch, z);
  for (const auto& r : j.at("ranges"))
    s.map(r.at("pages").get<std::uint64_t>(), Permission::parse(r.at("perm").get<std::string>()),
          Zone::Fixed, parse_hex(r.at("base")), word_from(r.at("content")),
          r.at("label").get<std::string>());
  // Restore overlay words regardless of current permissions.
  for (const auto& w : j.at("words")) {
    const Addr a = parse_hex(w.at("addr"));
    const auto range = s.find(a);
    if (!range) throw std::invalid_argument("word outside any mapping");
    const Permission saved = range->perm;
    s.protect(range->base, range->pages, Permission::rw());
    s.write(a, word_from(w));
    s.protect(range->base, range->pages, saved);
  }
  s.reset_counts();
  return s;
}

json to_json(const MemoryLayout& l) {
  return {{"schema", kSchemaVersion},
          {"arch", to_string(l.arch.name)},
          {"seed", l.seed},
          {"pie", l.pie},
          {"offsets",
           {{"stack_offset", hex(l.stack_offset)},
            {"mmap_offset", hex(l.mmap_offset)},
            {"brk_offset", hex(l.brk_offset)},
            {"load_offset", hex(l.load_offset)}}},
          {"code_base", hex(l.code_base)},
          {"heap_base", hex(l.heap_base)},
          {"mmap_base", hex(l.mmap_base)},
          {"stack_base", hex(l.stack_base)}};
}

json entropy_table(const LayoutConfig& c) {
  json rows = json::array();
  for (OffsetKind k : kAllOffsets) {
    const auto& iv = c.interval(k);
    rows.push_back({{"name", offset_name(k)},
                    {"interval", "[0," + hex(iv.upper) + ")"},
                    {"bits", iv.bits()},
                    {"entropy", iv.entropy(c.arch)}});
  }
  return rows;
}

}  // namespace lrds
