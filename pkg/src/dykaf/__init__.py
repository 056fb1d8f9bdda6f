"""DyKAF: Kronecker-factored Fisher preconditioning maintained by projector splitting."""
