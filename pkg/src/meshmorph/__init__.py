"""Two-stage CVT surface repair and Eikonal-convection mesh deformation."""
