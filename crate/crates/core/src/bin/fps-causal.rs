fn main() {
    fps_causal::cli::main()
}
