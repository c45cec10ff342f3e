fn main() -> std::process::ExitCode {
    privci::cli::main()
}
