#pragma once

#include "ofield/image.hpp"

namespace ofield {

// Binary morphology. Disk variants use a Euclidean structuring element
// {(dy,dx) : dy²+dx² ≤ r²}; the square variant uses Chebyshev distance.
// Pixels outside the image never contribute.

Mask dilate_disk(const Mask& mask, int radius);
Mask erode_disk(const Mask& mask, int radius);
Mask dilate_square(const Mask& mask, int radius);

}  // namespace ofield
