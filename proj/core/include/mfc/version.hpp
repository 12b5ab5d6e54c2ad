#ifndef MFC_VERSION_HPP
#define MFC_VERSION_HPP

namespace mfc {

inline constexpr const char* kVersion = "mfcontrol 0.1.0";

}

#endif
