#include "opq/common.hpp"
