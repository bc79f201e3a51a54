#ifndef IMS_IMS_HPP
#define IMS_IMS_HPP

#include "ims/autodiff.hpp"
#include "ims/common.hpp"
#include "ims/dataset.hpp"
#include "ims/environments.hpp"
#include "ims/experiment.hpp"
#include "ims/infotheory.hpp"
#include "ims/numerics.hpp"
#include "ims/objectives.hpp"

#endif  // IMS_IMS_HPP
