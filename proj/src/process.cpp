#include "lrds/process.hpp"

namespace lrds {

namespace {

constexpr const char* kThreadStack = "thread-stack";
constexpr const char* kSafeStack = "safe-stack";
constexpr const char* kUnsafeStack = "unsafe-stack";

Addr find_label(const AddressSpace& s, const char* label) {
  for (const auto& r : s.ranges())
    if (r.label == label) return r.base;
  throw std::logic_error(std::string("process image lacks ") + label);
}

}  // namespace

Process::Process(const MemoryLayout& layout, Scheme scheme, Libs libs, const RegionParams& region,
                 std::uint64_t seed)
    : layout_(layout),
      scheme_(scheme),
      libs_(libs),
      space_(make_process_space(layout)),
      code_{layout.code_base},
      rng_(Rng::derive(seed, 0x5EED)) {
  libc_ = find_label(space_, labels::kLibc);
  libc_data_ = find_label(space_, labels::kLibcData);
  heap_cursor_ = find_label(space_, labels::kHeap);
  heap_end_ = heap_cursor_ + kInitialHeapPages * space_.page_size();
  if (scheme_ == Scheme::ReturnStack) region_ = init_region(space_, region);

  const AddrRange main_stack{layout.stack_floor(), layout.stack_base};
  std::optional<AddrRange> unsafe;
  if (scheme_ == Scheme::SafeStackStyle || scheme_ == Scheme::AGStackStyle) {
    const Addr u = space_.map(kStackPages, Permission::rw(), Zone::Heap, 0, {}, kUnsafeStack);
    unsafe = AddrRange{u, u + kStackPages * space_.page_size()};
  }
  add_thread(main_stack, unsafe);
}

Thread& Process::add_thread(AddrRange stack, std::optional<AddrRange> unsafe) {
  Thread t;
  t.id = static_cast<int>(threads_.size());
  t.stack = stack;
  t.unsafe_stack = unsafe;
  t.tcb = tcb_address(t.id);
  if (t.tcb + kTcbBytes > libc_data_ + kLibcDataPages * space_.page_size())
    throw std::runtime_error("TCB table full");
  t.state = MachineState(layout_.arch, scheme_, libs_, space_, code_);
  t.state.set(t.state.sp_reg(), stack.hi - kInitialStackReserve);
  t.state.set(frame_pointer(layout_.arch.name), 0);
  if (region_) {
    t.retstack = create_stack(space_, *region_, rng_);
    t.state.rs = {t.retstack->base,
                  t.retstack->base + region_->stack_pages * space_.page_size()};
    t.state.set(t.state.rsp_reg(), t.retstack->base);
  }
  space_.write(t.tcb, Word{ContentTag::Data, stack.lo});
  space_.write(t.tcb + 8, Word{ContentTag::Data, stack.hi - stack.lo});
  if (unsafe) space_.write(t.tcb + 16, Word{ContentTag::Data, unsafe->hi});
  threads_.push_back(std::move(t));
  return threads_.back();
}

Thread& Process::spawn_thread() {
  const std::uint64_t bytes = kStackPages * space_.page_size();
  const bool safe = scheme_ == Scheme::SafeStackStyle || scheme_ == Scheme::AGStackStyle;
  const Addr s = space_.map(kStackPages, Permission::rw(), Zone::MmapSpace, 0, {},
                            safe ? kSafeStack : kThreadStack);
  std::optional<AddrRange> unsafe;
  if (safe) {
    const Addr u = space_.map(kStackPages, Permission::rw(), Zone::Heap, 0, {}, kUnsafeStack);
    unsafe = AddrRange{u, u + bytes};
  }
  return add_thread({s, s + bytes}, unsafe);
}

Thread& Process::spawn_thread(const Program& p, std::size_t entry) {
  Thread& t = spawn_thread();
  exec_call(t.state, p, entry);
  return t;
}

void Process::exit_thread(int id) {
  Thread& t = thread(id);
  if (!t.alive) throw std::logic_error("thread " + std::to_string(id) + " already exited");
  if (id != 0) {
    space_.unmap(t.stack.lo, (t.stack.hi - t.stack.lo) / space_.page_size());
    if (t.unsafe_stack)
      space_.unmap(t.unsafe_stack->lo, (t.unsafe_stack->hi - t.unsafe_stack->lo) / space_.page_size());
  }
  if (t.retstack) destroy_stack(space_, *region_, *t.retstack);
  t.alive = false;
}

Addr Process::heap_alloc(std::uint64_t bytes) {
  bytes = (bytes + 15) & ~std::uint64_t{15};
  if (heap_cursor_ + bytes > heap_end_) {
    const std::uint64_t ps = space_.page_size();
    const std::uint64_t pages = std::max<std::uint64_t>(kInitialHeapPages, (bytes + ps - 1) / ps);
    heap_cursor_ = space_.map(pages, Permission::rw(), Zone::Heap, 0, {}, labels::kHeap);
    heap_end_ = heap_cursor_ + pages * ps;
  }
  const Addr a = heap_cursor_;
  heap_cursor_ += bytes;
  return a;
}

std::vector<AddrRange> Process::hidden_ranges() const {
  std::vector<AddrRange> out;
  for (const auto& t : threads_) {
    if (!t.alive) continue;
    if (t.retstack)
      out.push_back({t.retstack->base, t.state.rs.limit});
    else if (scheme_ == Scheme::SafeStackStyle || scheme_ == Scheme::AGStackStyle)
      out.push_back(t.stack);
  }
  return out;
}

}  // namespace lrds
