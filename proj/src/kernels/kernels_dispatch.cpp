#include "dropreg/kernels.hpp"

#include <atomic>
#include <cstdlib>

#include "dropreg/errors.hpp"

namespace dropreg::kernels {
namespace {

std::atomic<const Impl*> g_active{nullptr};

const Impl* pick(const std::string& name) {
    if (name == "scalar") return &scalar_impl();
    if (name == "avx2") {
        const Impl* impl = avx2_impl();
        if (!impl) throw ConfigError("kernels: avx2 requested but not available on this CPU");
        return impl;
    }
    if (name == "auto" || name.empty()) {
        if (const Impl* impl = avx2_impl()) return impl;
        return &scalar_impl();
    }
    throw ConfigError("kernels: unknown implementation '" + name + "' (scalar|avx2|auto)");
}

}  // namespace

const Impl& active() {
    const Impl* impl = g_active.load(std::memory_order_acquire);
    if (!impl) {
        const char* env = std::getenv("DROPREG_KERNELS");
        impl = pick(env ? env : "auto");
        g_active.store(impl, std::memory_order_release);
    }
    return *impl;
}

void select(const std::string& name) {
    g_active.store(pick(name), std::memory_order_release);
}

}  // namespace dropreg::kernels
